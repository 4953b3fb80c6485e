"""Lower a booked schedule to per-controller HISQ assembly."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..fabric import Topology
from ..isa import Program, assemble
from ..sim import Durations
from .ir import CircuitIR
from .mapping import MappingConfig, default_mapping
from .schedule import Branch, Capture, Emit, Schedule, SyncItem, insert_sync, schedule

R_CAPTURE, R_PARITY, R_TMP = "r8", "r9", "r10"
_MAX_SETTLE = 32
_PRIO = {SyncItem: 0, Capture: 1, Emit: 2}


class CodegenError(ValueError):
    pass


def _ordered(segment) -> list:
    return sorted(segment.items, key=lambda it: (it.time, _PRIO[type(it)]))


class _Writer:
    def __init__(self, sched: Schedule, c: int):
        self.s, self.c = sched, c
        self.lines: list[str] = []
        self.t = 0
        spec = sched.topology.controllers[c]
        self.lead = spec.recv_lead
        # conservative estimate of the cycle the pipeline issues the next line
        self.pipe, self.ratio = 0, spec.pipeline_ratio
        self.slips: dict[tuple, int] = {}

    def op(self, text: str, note: str | None = None) -> None:
        self.lines.append(f"    {text}" + (f"  #@ {note}" if note else ""))
        self.pipe += self.ratio

    def retire(self, key: tuple, ready: int, assumed: int) -> None:
        self.pipe = max(self.pipe, ready)
        if self.pipe > assumed:
            self.slips[key] = self.pipe

    def wait(self, target: int) -> None:
        d = target - self.t
        if d < 0:
            raise CodegenError(f"controller {self.c}: timeline runs backwards ({self.t} -> {target})")
        if d:
            self.op(f"waiti {d}")
        self.t = target

    def emit(self, e: Emit, base: int = 0) -> None:
        self.wait(base + e.time)
        self.op(f"cw.i.i {e.port}, {e.codeword}", e.label)

    def sync(self, it: SyncItem) -> None:
        sp = self.s.syncs[it.request]
        self.wait(it.time)
        if sp.kind == "nearby":
            self.op(f"sync {sp.target[self.c]}", f"slack={sp.ready[self.c] - sp.booking[self.c]}")
        else:
            self.op(f"sync {sp.target[self.c]}")

    def capture(self, it: Capture) -> None:
        self.wait(it.time)
        v = self.s.versions[it.slot]
        self.retire(("cap", it.slot), v.cap, v.exec)
        self.op(f"recv {R_CAPTURE}, {self.c}")
        self.op(f"sw {R_CAPTURE}, {4 * it.slot}(r0)")
        for d in it.dests:
            self.op(f"send {d}, {R_CAPTURE}")

    def branch(self, br: Branch) -> None:
        k = br.index
        self.wait(br.ready)
        for f in br.fetch:
            self.retire(("fetch", self.c, f.slot), f.arrival, f.exec)
            self.op(f"recv {R_TMP}, {f.src}")
            self.op(f"sw {R_TMP}, {4 * f.slot}(r0)")
            self.t = max(self.t, f.exec + self.lead)
        self.op(f"addi {R_PARITY}, r0, {1 - br.value}")
        for slot in br.slots:
            self.op(f"lw {R_TMP}, {4 * slot}(r0)")
            self.op(f"xor {R_PARITY}, {R_PARITY}, {R_TMP}")
        if br.start - self.t < 1:
            raise CodegenError(f"controller {self.c}: branch {k} has no issue slack")
        self.wait(br.start)
        skip = f"else{k}" if br.lockstep else f"skip{k}"
        self.op(f"beq {R_PARITY}, r0, {skip}")
        for e in sorted(br.body, key=lambda e: (e.time, e.port)):
            self.emit(e, br.start)
        self.wait(br.start + br.span)
        if br.lockstep:
            self.op(f"j end{k}")
            self.lines.append(f"else{k}:")
            self.t, taken = br.start, self.pipe
            self.wait(br.start + br.span)
            self.pipe = max(self.pipe, taken)
            self.lines.append(f"end{k}:")
        else:
            self.lines.append(f"skip{k}:")

    def render(self) -> str:
        for seg in self.s.segments[self.c]:
            for it in _ordered(seg):
                if isinstance(it, Emit):
                    self.emit(it)
                elif isinstance(it, SyncItem):
                    if self.s.mode == "bisp":
                        self.sync(it)
                else:
                    self.capture(it)
            if seg.branch is not None:
                self.branch(seg.branch)
        return "\n".join(self.lines) + ("\n" if self.lines else "")


def _lower_all(sched: Schedule, mode: str) -> tuple[dict[int, str], dict[tuple, int]]:
    if sched.mode != mode:
        raise CodegenError(f"schedule was built for {sched.mode}, not {mode}")
    if not sched.synced:
        raise CodegenError("run insert_sync before code generation")
    texts, slips = {}, {}
    for c in sched.controllers:
        w = _Writer(sched, c)
        texts[c] = w.render()
        slips.update(w.slips)
    return texts, slips


def _lower(sched: Schedule, mode: str) -> dict[int, str]:
    texts, slips = _lower_all(sched, mode)
    for key, cyc in sorted(slips.items()):
        sched.diagnostics.append(f"recv {key} retires at cycle {cyc}, later than scheduled")
    return texts


def _assemble_all(texts: dict[int, str]) -> dict[int, Program]:
    return {c: assemble(t, controller=c) for c, t in texts.items()}


def codegen_bisp(sched: Schedule) -> dict[int, Program]:
    return _assemble_all(_lower(sched, "bisp"))


def codegen_lockstep(sched: Schedule) -> dict[int, Program]:
    """Programs for the shared-flow baseline.

    The central controller has no program of its own: the engine models it
    as a star that rebroadcasts every datum sent to the central address.
    """
    return _assemble_all(_lower(sched, "lockstep"))


@dataclass
class Compiled:
    schedule: Schedule
    texts: dict[int, str]
    programs: dict[int, Program] = field(default_factory=dict)

    @property
    def mode(self) -> str:
        return self.schedule.mode

    def manifest(self) -> dict:
        s = self.schedule
        return {
            "mode": s.mode,
            "shots": s.shots,
            "cycle_ns": s.cycle_ns,
            "preamble_cycles": s.preamble,
            "controllers": {str(c): f"c{c}.s" for c in s.controllers},
            "durations_ns": [s.durations.single, s.durations.two, s.durations.measure],
            "mapping": s.mapping.to_dict(),
            "syncs": [{"kind": p.kind, "nodes": list(p.nodes), "point": p.point,
                       "booking": {str(k): v for k, v in p.booking.items()},
                       "predicted_overhead": p.predicted_overhead} for p in s.syncs],
            "diagnostics": list(s.diagnostics),
        }

    def write(self, outdir) -> Path:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        for c, text in self.texts.items():
            (out / f"c{c}.s").write_text(text)
        path = out / "manifest.json"
        path.write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")
        return path


def compile_circuit(ir: CircuitIR, topology: Topology, mapping: MappingConfig | None = None,
                    mode: str = "bisp", durations: Durations | None = None, cycle_ns: int = 4) -> Compiled:
    """Schedule, book syncs and lower, iterating until every recv retires when scheduled.

    The scheduler's pipeline model ignores instructions that interleave with
    forwarding code, so lowering reports late recvs and the schedule is
    rebuilt with those cycles as hints.  Hints only grow, so this settles.
    """
    mapping = mapping or default_mapping(ir.qubits)
    hints: dict[tuple, int] = {}
    for _ in range(_MAX_SETTLE):
        sched = insert_sync(schedule(ir, mapping, topology, durations, mode, cycle_ns, hints))
        texts, slips = _lower_all(sched, mode)
        if not slips:
            break
        for key, cyc in slips.items():
            hints[key] = max(hints.get(key, 0), cyc)
    else:
        texts = _lower(sched, mode)
    return Compiled(sched, texts, _assemble_all(texts))

