"""Qubit-to-port assignment and codeword tables."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..fabric import Topology
from .ir import SINGLE_QUBIT_GATES, TWO_QUBIT_GATES, CircuitIR, Measure

DRIVE_PORT = 0
MEASURE_PORT = 1

# Two-qubit gates get one codeword per role: '<gate>.c' on the first qubit's
# drive port, '<gate>.t' on the second.
DEFAULT_CODEWORDS: dict[str, int] = {
    **{g: i + 1 for i, g in enumerate(sorted(SINGLE_QUBIT_GATES))},
    **{f"{g}.{role}": 32 + 2 * i + j
       for i, g in enumerate(sorted(TWO_QUBIT_GATES)) for j, role in enumerate("ct")},
    "measure": 64,
}


class MappingError(ValueError):
    pass


@dataclass(frozen=True)
class Port:
    controller: int
    port: int


@dataclass
class MappingConfig:
    drive: dict[str, Port]
    measure: dict[str, Port]
    codewords: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_CODEWORDS))

    def controller(self, qubit: str) -> int:
        try:
            return self.drive[qubit].controller
        except KeyError:
            raise MappingError(f"unmapped qubit {qubit!r}") from None

    def codeword(self, gate: str, role: str | None = None) -> int:
        key = f"{gate}.{role}" if role else gate
        if key not in self.codewords:
            raise MappingError(f"no codeword for {key!r}")
        return self.codewords[key]

    def controllers(self) -> list[int]:
        return sorted({p.controller for p in (*self.drive.values(), *self.measure.values())})

    def check(self, ir: CircuitIR, topo: Topology) -> None:
        """Coverage, port ranges and the adjacency rule for two-qubit gates."""
        for q in ir.qubits:
            if q not in self.drive:
                raise MappingError(f"unmapped qubit {q!r}")
        measured = {st.qubit for st in ir.body if isinstance(st, Measure)}
        for q in sorted(measured):
            if q not in self.measure:
                raise MappingError(f"no readout port for measured qubit {q!r}")
            d, m = self.drive[q], self.measure[q]
            if d.controller != m.controller:
                raise MappingError(f"qubit {q!r} is driven and read out by different controllers")
            spec = topo.controllers.get(m.controller)
            if spec is None or m.port not in spec.capture:
                raise MappingError(f"readout port {m.port} of controller {m.controller} is not a capture port")
        for q, p in [*self.drive.items(), *self.measure.items()]:
            spec = topo.controllers.get(p.controller)
            if spec is None:
                raise MappingError(f"qubit {q!r} mapped to unknown controller {p.controller}")
            if not 0 <= p.port < spec.ports:
                raise MappingError(f"qubit {q!r} mapped to port {p.port} outside 0..{spec.ports - 1}")

    def check_pair(self, a: str, b: str, topo: Topology) -> None:
        ca, cb = self.controller(a), self.controller(b)
        if ca != cb and topo.mesh_latency(ca, cb) is None:
            raise MappingError(f"two-qubit gate on {a!r},{b!r}: controllers {ca} and {cb} are not mesh-adjacent")

    def to_dict(self) -> dict:
        return {
            "drive": {q: [p.controller, p.port] for q, p in self.drive.items()},
            "measure": {q: [p.controller, p.port] for q, p in self.measure.items()},
            "codewords": dict(self.codewords),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MappingConfig":
        return cls(
            drive={q: Port(*v) for q, v in d["drive"].items()},
            measure={q: Port(*v) for q, v in d.get("measure", {}).items()},
            codewords={**DEFAULT_CODEWORDS, **d.get("codewords", {})},
        )

    @classmethod
    def load(cls, path) -> "MappingConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def default_mapping(qubits: list[str], first_controller: int = 0) -> MappingConfig:
    """Qubit i on controller i: drive on port 0, readout on port 1."""
    return MappingConfig(
        drive={q: Port(first_controller + i, DRIVE_PORT) for i, q in enumerate(qubits)},
        measure={q: Port(first_controller + i, MEASURE_PORT) for i, q in enumerate(qubits)},
    )
