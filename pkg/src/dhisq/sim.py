"""Cycle-level engine advancing all controllers and the fabric on one clock.

Per cycle: deliver due messages, let routers act, step every pipeline,
then tick every TCU. Quiet stretches (all pipelines idle, nothing due)
are skipped in one jump.
"""
from __future__ import annotations

import hashlib
import io
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from .fabric import Message, Network, Router, Topology
from .isa import CENTRAL_ADDR, Program, disassemble
from .node import Controller, NodeFault, SyncRecord, TraceRecord

TELF_COLUMNS = "cycle,time_ns,node,port,codeword,label"


class SimulationError(RuntimeError):
    pass


class DeadlockError(SimulationError):
    pass


@dataclass(frozen=True)
class Durations:
    single: int = 20
    two: int = 40
    measure: int = 300

    def of(self, gate: str, nqubits: int = 1) -> int:
        if gate == "measure":
            return self.measure
        return self.two if nqubits == 2 else self.single

    def check(self, cycle_ns: int) -> None:
        for name in ("single", "two", "measure"):
            v = getattr(self, name)
            if v <= 0 or v % cycle_ns:
                raise ValueError(f"{name} duration {v} ns is not a positive multiple of {cycle_ns} ns")


class FixedOutcomes:
    """Measurement bits from a table keyed by (node, port); exhausted lists read 0."""

    def __init__(self, table: dict[tuple[int, int], list[int]] | None = None):
        self.table = {k: list(v) for k, v in (table or {}).items()}

    def __call__(self, node: int, port: int, codeword: int, k: int) -> int:
        bits = self.table.get((node, port), [])
        return bits[k] if k < len(bits) else 0

    def describe(self) -> dict:
        return {"fixed": {f"{n}:{p}": v for (n, p), v in sorted(self.table.items())}}


class RandomOutcomes:
    """Seeded pseudo-random bits; ``p1`` is P(1), globally or per (node, port)."""

    def __init__(self, seed: int = 0, p1: float | dict[tuple[int, int], float] = 0.5):
        self.seed, self.p1 = seed, p1

    def for_shot(self, shot: int) -> "RandomOutcomes":
        return RandomOutcomes(self.seed * 1_000_003 + shot, self.p1)

    def __call__(self, node: int, port: int, codeword: int, k: int) -> int:
        p = self.p1.get((node, port), 0.5) if isinstance(self.p1, dict) else self.p1
        return int(random.Random(f"{self.seed}:{node}:{port}:{k}").random() < p)

    def describe(self) -> dict:
        p1 = {f"{n}:{q}": v for (n, q), v in sorted(self.p1.items())} if isinstance(self.p1, dict) else self.p1
        return {"random": {"seed": self.seed, "p1": p1}}


@dataclass
class SimConfig:
    topology: Topology
    programs: dict[int, Program]
    cycle_ns: int = 4
    durations: Durations = field(default_factory=Durations)
    outcomes: Callable = field(default_factory=FixedOutcomes)
    mode: str = "bisp"
    shots: int = 1
    cycle_cap: int = 10 ** 7
    participants: dict[int, frozenset] = field(default_factory=dict)

    def validate(self) -> None:
        if self.cycle_ns <= 0:
            raise ValueError("cycle period must be positive")
        if self.mode not in ("bisp", "lockstep"):
            raise ValueError(f"unknown mode {self.mode!r}")
        self.durations.check(self.cycle_ns)
        for cid in self.programs:
            if cid not in self.topology.controllers:
                raise ValueError(f"program assigned to unknown controller {cid}")
        for r, members in self.participants.items():
            if not set(members) <= self.topology.leaves_under(r):
                raise ValueError(f"participants of router {r} must be leaves beneath it")

    def digest(self) -> str:
        blob = {
            "topology": self.topology.to_dict(),
            "programs": {str(k): disassemble(p) for k, p in sorted(self.programs.items())},
            "cycle_ns": self.cycle_ns,
            "durations": [self.durations.single, self.durations.two, self.durations.measure],
            "outcomes": self.outcomes.describe() if hasattr(self.outcomes, "describe") else repr(self.outcomes),
            "mode": self.mode,
            "shots": self.shots,
            "participants": {str(k): sorted(v) for k, v in sorted(self.participants.items())},
        }
        return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class RunReport:
    mode: str
    cycle_ns: int
    runtimes_ns: list[int] = field(default_factory=list)
    overheads: list[list[dict]] = field(default_factory=list)            # per shot
    qubit_windows: list[dict[str, tuple[int, int]]] = field(default_factory=list)  # per shot, ns
    sync_records: list[list[SyncRecord]] = field(default_factory=list)   # per shot
    late_issues: int = 0
    cycles: list[int] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)

    @property
    def runtime_ns(self) -> float:
        return sum(self.runtimes_ns) / len(self.runtimes_ns) if self.runtimes_ns else 0.0

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "cycle_ns": self.cycle_ns,
            "runtimes_ns": self.runtimes_ns,
            "mean_runtime_ns": self.runtime_ns,
            "sync_overheads": [[{k: (sorted(v) if isinstance(v, (set, frozenset)) else v) for k, v in o.items()}
                                for o in shot] for shot in self.overheads],
            "qubit_windows_ns": [{q: list(w) for q, w in sorted(shot.items())} for shot in self.qubit_windows],
            "late_issues": self.late_issues,
            "diagnostics": self.diagnostics,
        }

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------------ engine

def default_participants(config: SimConfig) -> dict[int, frozenset]:
    """Explicit participant sets, else the leaves whose programs sync to that router."""
    out = {}
    for r in config.topology.routers:
        if r in config.participants:
            out[r] = frozenset(config.participants[r])
        else:
            out[r] = frozenset(cid for cid, prog in config.programs.items()
                               if any(ins.mnemonic == "sync" and ins.args[0] == r for ins in prog))
    return out


class Engine:
    """One shot of one configuration."""

    def __init__(self, config: SimConfig, outcomes: Callable):
        self.cfg = config
        topo = config.topology
        self.topo = topo
        self.net = Network()
        self.nodes: dict[int, Controller] = {}
        for cid in sorted(config.programs):
            self.nodes[cid] = Controller(topo.controllers[cid], config.programs[cid], topo, outcomes=outcomes)
        self.routers = {r: Router(r, topo, default_participants(config)) for r in topo.routers}
        self.traces: list[TraceRecord] = []
        self.now = 0

    def _dispatch(self, msg: Message, now: int) -> None:
        if msg.dst in self.routers:
            for out in self.routers[msg.dst].route_step(msg, now):
                self._post(out, now)
        elif msg.dst == CENTRAL_ADDR:
            # the originator already holds the value
            for cid in sorted(set(self.nodes) - {msg.origin}):
                self.net.post(Message("datum", CENTRAL_ADDR, cid, now, now + self.topo.star_latency,
                                      msg.value, origin=msg.origin))
        elif msg.dst in self.nodes:
            self.nodes[msg.dst].receive(msg)
        else:
            raise SimulationError(f"message to unknown destination {msg.dst}: {msg}")

    def _post(self, msg: Message, now: int) -> None:
        if msg.arrival == now:
            self._dispatch(msg, now)
        else:
            self.net.post(msg)

    def finished(self) -> bool:
        return (all(n.done for n in self.nodes.values()) and not len(self.net)
                and not any(r.pending() for r in self.routers.values()))

    def run(self) -> int:
        cap = self.cfg.cycle_cap
        g = 0
        try:
            while not self.finished():
                if g > cap:
                    raise SimulationError(f"cycle cap {cap} exceeded; {self._blocked()}")
                for msg in self.net.deliver(g):
                    self._dispatch(msg, g)
                for node in self.nodes.values():
                    for msg in node.step_pipeline(g):
                        self._post(msg, g)
                for node in self.nodes.values():
                    recs, outs = node.tcu_tick(g)
                    self.traces.extend(recs)
                    for msg in outs:
                        self._post(msg, g)
                g = self._advance(g)
        except NodeFault as exc:
            raise SimulationError(f"cycle {g}: {exc}") from exc
        self.now = g
        return g

    def _advance(self, g: int) -> int:
        nxt = g + 1
        if self.finished():
            return nxt
        if not all(n.pipeline_idle() for n in self.nodes.values()):
            return nxt
        cands = []
        if (t := self.net.next_arrival()) is not None:
            cands.append(t)
        for n in self.nodes.values():
            for t in (n.next_activity(nxt), n.wake_time(nxt)):
                if t is not None:
                    cands.append(t)
        if not cands:
            raise DeadlockError(f"cycle {g}: deadlock; {self._blocked()}")
        target = max(nxt, min(cands))
        if target > nxt:
            for n in self.nodes.values():
                n.skip(target - nxt)
        return target

    def _blocked(self) -> str:
        parts = []
        for cid, n in self.nodes.items():
            if n.done:
                continue
            why = n.stall or ("sync barrier" if n.barriers and n.barriers[0].stamp == n.local else "running")
            parts.append(f"node {cid} pc={n.pc} {why}")
        return "; ".join(parts) or "no blocked nodes"


def run(config: SimConfig) -> tuple[list[TraceRecord], RunReport]:
    """Simulate every shot. Traces come back shot-major, each shot sorted by (cycle, node, port)."""
    config.validate()
    report = RunReport(config.mode, config.cycle_ns)
    all_traces: list[TraceRecord] = []
    for shot in range(config.shots):
        outcomes = config.outcomes.for_shot(shot) if hasattr(config.outcomes, "for_shot") else config.outcomes
        eng = Engine(config, outcomes)
        eng.run()
        traces = sorted(eng.traces, key=lambda r: (r.cycle, r.node, r.port))
        for r in traces:
            r.shot = shot
        all_traces.extend(traces)
        last = max((r.cycle for r in traces), default=0)
        report.runtimes_ns.append(last * config.cycle_ns)
        records = [rec for n in eng.nodes.values() for rec in n.records]
        report.sync_records.append(records)
        report.overheads.append(sync_overhead(records))
        report.qubit_windows.append(qubit_windows(traces, config.durations, config.cycle_ns))
        report.late_issues += sum(n.late_issues for n in eng.nodes.values())
        report.cycles.append(eng.now)
        for n in eng.nodes.values():
            report.diagnostics.extend(f"shot {shot} node {n.id}: {d}" for d in n.diagnostics)
    return all_traces, report


def run_lockstep(config: SimConfig) -> tuple[list[TraceRecord], RunReport]:
    """Lock-step baseline: central star controller rebroadcasts every datum sent to it."""
    for cid, prog in config.programs.items():
        if any(ins.mnemonic == "sync" for ins in prog):
            raise SimulationError(f"lock-step program for controller {cid} contains sync")
    config.mode = "lockstep"
    return run(config)


# ------------------------------------------------------------ analysis

def sync_overhead(records: Iterable[SyncRecord]) -> list[dict]:
    """Group sync records into sync events and measure their overhead.

    Overhead is the resumption cycle minus the latest participant's proposed
    point. Nearby pairs are matched by occurrence index on each side.
    """
    groups: dict[tuple, list[SyncRecord]] = {}
    for rec in records:
        if rec.resumed is None:
            raise ValueError(f"sync record without resumption annotation: {rec}")
        if rec.mode == "nearby":
            key = ("nearby", frozenset((rec.node, rec.target)), rec.index)
        else:
            key = ("remote", rec.target, rec.index)
        groups.setdefault(key, []).append(rec)
    out = []
    for key, recs in sorted(groups.items(), key=lambda kv: (min(r.resumed for r in kv[1]), str(kv[0]))):
        latest = max(r.proposed for r in recs)
        resumed = {r.resumed for r in recs}
        out.append({
            "mode": key[0],
            "target": sorted(key[1]) if key[0] == "nearby" else key[1],
            "index": key[2],
            "nodes": sorted(r.node for r in recs),
            "max_proposed": latest,
            "resumed": max(resumed),
            "simultaneous": len(resumed) == 1,
            "overhead": max(resumed) - latest,
        })
    return out


def parse_label(label: str) -> tuple[str, list[str]]:
    """'cx q0,q1' -> ('cx', ['q0', 'q1'])."""
    name, _, rest = label.strip().partition(" ")
    qubits = [q for q in rest.replace(" ", "").split(",") if q]
    return name, qubits


def qubit_windows(traces: Iterable[TraceRecord], durations: Durations, cycle_ns: int) -> dict[str, tuple[int, int]]:
    """Per qubit (first op start, last op end) in ns, from compiler labels."""
    win: dict[str, list[int]] = {}
    for r in traces:
        if not r.label:
            continue
        name, qubits = parse_label(r.label)
        start = r.cycle * cycle_ns
        end = start + durations.of(name, len(qubits))
        for q in qubits:
            w = win.setdefault(q, [start, end])
            w[0], w[1] = min(w[0], start), max(w[1], end)
    return {q: (a, b) for q, (a, b) in win.items()}


def estimate_fidelity(report: RunReport, t1: float, t2: float) -> float:
    """Infidelity from exponential decoherence over each qubit's exposure window.

    ``t1``/``t2`` in seconds; averaged over shots.
    """
    if t1 <= 0 or t2 <= 0:
        raise ValueError("T1 and T2 must be positive")
    rate = (1.0 / t1 + 1.0 / t2) / 2.0
    vals = []
    for windows in report.qubit_windows:
        exposure = sum((b - a) * 1e-9 for a, b in windows.values())
        vals.append(1.0 - math.exp(-exposure * rate))
    return sum(vals) / len(vals) if vals else 0.0


# --------------------------------------------------------------- TELF

def emit_telf(traces: Iterable[TraceRecord], sink, cycle_ns: int = 4, config_hash: str = "") -> None:
    """Write TELF text to a path or a writable text stream."""
    buf = io.StringIO()
    buf.write(f"# TELF v1 config={config_hash or '-'} cycle_ns={cycle_ns}\n")
    buf.write(TELF_COLUMNS + "\n")
    shot = None
    for r in traces:
        s = getattr(r, "shot", 0)
        if s != shot:
            if shot is not None or s:
                buf.write(f"# shot {s}\n")
            shot = s
        label = r.label.replace(",", ";")
        buf.write(f"{r.cycle},{r.cycle * cycle_ns},{r.node},{r.port},{r.codeword},{label}\n")
    text = buf.getvalue()
    if hasattr(sink, "write"):
        sink.write(text)
    else:
        Path(sink).write_text(text)


def parse_telf(source) -> list[TraceRecord]:
    text = source.read() if hasattr(source, "read") else Path(source).read_text() \
        if not isinstance(source, str) or "\n" not in source else source
    out, shot = [], 0
    for line in text.splitlines():
        if not line or line == TELF_COLUMNS:
            continue
        if line.startswith("# shot "):
            shot = int(line[7:])
            continue
        if line.startswith("#"):
            continue
        cyc, _ns, node, port, cw, label = line.split(",", 5)
        out.append(TraceRecord(int(cyc), int(node), int(port), int(cw), label.replace(";", ","), shot))
    return out
