"""Benchmark generators and the BISP-vs-lockstep comparison runner."""
from __future__ import annotations

import csv
import io
import random
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

from .dqcc import (CircuitIR, Conditional, Gate, MappingConfig, Measure, Port, compile_circuit,
                   default_mapping)
from .dqcc.ir import Statement
from .dqcc.mapping import DRIVE_PORT, MEASURE_PORT
from .fabric import Topology
from .isa import Program, assemble
from .sim import Durations, RandomOutcomes, RunReport, SimConfig, estimate_fidelity, run, run_lockstep

CAPTURE_CYCLES = 75          # 300 ns readout at 4 ns/cycle
DEFAULT_GRID_US = (30, 60, 100, 150, 200, 300)


# ------------------------------------------------------------- sync-loop experiment

@dataclass(frozen=True)
class Fig10:
    topology: Topology
    control: Program
    readout: Program
    inner: int
    outer: int
    increment: int
    link_latency: int

    @property
    def programs(self) -> dict[int, Program]:
        return {0: self.control, 1: self.readout}


def gen_fig10(inner: int = 8, outer: int = 2, increment: int = 30, link_latency: int = 4,
              trigger_skew: int = 57) -> Fig10:
    """Control board (node 0) and readout board (node 1) syncing every inner iteration.

    The control board waits ``$1`` cycles before each sync and bumps ``$1``
    by ``increment``; its outputs leave ``trigger_skew`` cycles after commit,
    which the readout board compensates with ``waiti 57``.
    """
    if inner < 1 or outer < 1 or increment < 0:
        raise ValueError("loop counts must be positive and the increment non-negative")
    n = link_latency
    control = f"""
        addi $3, $0, {outer}
    outer:
        addi $1, $0, 0
        addi $2, $0, {inner}
    inner:
        waitr $1
        sync 1
        waiti {n}
        cw.i.i 0, 1        #@ yellow
        waiti 10
        cw.i.i 0, 2        #@ blue
        addi $1, $1, {increment}
        addi $2, $2, -1
        bne $2, $0, inner
        addi $3, $3, -1
        bne $3, $0, outer
    """
    readout = f"""
        addi $3, $0, {outer}
    outer:
        addi $2, $0, {inner}
    inner:
        sync 0
        waiti {n}
        waiti {trigger_skew}
        cw.i.i 0, 1        #@ yellow
        waiti 10
        cw.i.i 0, 2        #@ blue
        waiti 20
        cw.i.i 1, 3        #@ acquire
        addi $2, $2, -1
        bne $2, $0, inner
        addi $3, $3, -1
        bne $3, $0, outer
    """
    topo = Topology.balanced(2, mesh_latency=n)
    topo.controllers[0] = replace(topo.controllers[0], trigger_delay=trigger_skew)
    return Fig10(topo, assemble(control, controller=0), assemble(readout, controller=1),
                 inner, outer, increment, n)


def fig10_report(fig: Fig10, cycle_ns: int = 4) -> dict:
    """Run the sync-loop experiment and extract its per-iteration quantities."""
    traces, report = run(SimConfig(fig.topology, fig.programs, cycle_ns=cycle_ns))
    ctrl = sorted((r for r in report.sync_records[0] if r.node == 0), key=lambda r: r.index)
    # control sync start measured from the previous synchronized resumption,
    # i.e. from the last aligned pulse pair; the first iteration has no reference
    lag = [None] + [(b.booking - a.resumed) * cycle_ns for a, b in zip(ctrl, ctrl[1:])]
    marked = {}
    for r in traces:
        if r.label in ("yellow", "blue"):
            marked.setdefault((r.label, r.node), []).append(r.cycle)
    pairs = {lab: list(zip(marked.get((lab, 0), []), marked.get((lab, 1), []))) for lab in ("yellow", "blue")}
    steps = []
    for o in range(fig.outer):
        seg = [x for x in lag[o * fig.inner:(o + 1) * fig.inner] if x is not None]
        steps += [b - a for a, b in zip(seg, seg[1:])]
    return {"traces": traces, "report": report, "lag_ns": lag, "steps_ns": steps, "pairs": pairs}


# ------------------------------------------------------ long-range CNOT

def long_range_cnot(chain: list[str], bits: list[str]) -> list[Statement]:
    """Constant-depth CNOT from ``chain[0]`` to ``chain[-1]`` through fresh ancillas.

    Ancillas pair up into Bell pairs; with an odd ancilla count the first one
    copies the control. The first member of each pair is read in Z (its parity
    drives an X on the target), every other ancilla in X (parity drives a Z on
    the control). ``bits`` names one classical bit per ancilla.
    """
    ctl, tgt, anc = chain[0], chain[-1], chain[1:-1]
    if not anc:
        raise ValueError("need at least one ancilla")
    if len(bits) != len(anc):
        raise ValueError("one bit per ancilla")
    bit = dict(zip(anc, bits))
    odd = len(anc) % 2 == 1
    pairs = [(anc[i], anc[i + 1]) for i in range(1 if odd else 0, len(anc) - 1, 2)]
    xs = ([anc[0]] if odd else []) + [b for _, b in pairs]
    zs = [a for a, _ in pairs]
    body: list[Statement] = []
    for a, b in pairs:
        body.append(Gate("h", (a,)))
    if odd:
        body.append(Gate("cx", (ctl, anc[0])))
    for a, b in pairs:
        body.append(Gate("cx", (a, b)))
    prev = anc[0] if odd else ctl
    for a, b in pairs:
        body.append(Gate("cx", (prev, a)))
        prev = b
    body.append(Gate("cx", (prev, tgt)))
    for a in zs:
        body.append(Measure(a, bit[a]))
    if zs:
        body.append(Conditional(tuple(bit[a] for a in zs), (Gate("x", (tgt,)),)))
    for a in xs:
        body.append(Gate("h", (a,)))
    for a in xs:
        body.append(Measure(a, bit[a]))
    body.append(Conditional(tuple(bit[a] for a in xs), (Gate("z", (ctl,)),)))
    return body


def gen_long_range_cnot(n: int, shots: int = 1) -> CircuitIR:
    """CNOT between q0 and q{n-1} on a line, q1..q{n-2} as ancillas."""
    if n < 3:
        raise ValueError("long-range CNOT needs at least 3 qubits")
    qubits = [f"q{i}" for i in range(n)]
    bits = [f"c{i}" for i in range(1, n - 1)]
    ir = CircuitIR(qubits, bits, long_range_cnot(qubits, bits), shots)
    ir.validate()
    return ir


def line_topology(n: int, *, capture_ports=(MEASURE_PORT,), ports: int = 8, **kw) -> Topology:
    """Balanced tree over ``n`` controllers, mesh along the line."""
    node = {"capture": {p: CAPTURE_CYCLES for p in capture_ports}, "ports": ports}
    return Topology.balanced(n, node=node, **kw)


# --------------------------------------------------------- conversion

def line_adjacency(qubits: list[str]) -> dict[str, set[str]]:
    adj = {q: set() for q in qubits}
    for a, b in zip(qubits, qubits[1:]):
        adj[a].add(b)
        adj[b].add(a)
    return adj


def _path(adj: dict[str, set[str]], a: str, b: str) -> list[str]:
    prev = {a: None}
    todo = deque([a])
    while todo:
        u = todo.popleft()
        if u == b:
            break
        for v in sorted(adj[u]):
            if v not in prev:
                prev[v] = u
                todo.append(v)
    if b not in prev:
        raise ValueError(f"no path between {a} and {b}")
    out = [b]
    while out[-1] != a:
        out.append(prev[out[-1]])
    return out[::-1]


@dataclass
class Dynamic:
    """A converted circuit plus where every qubit lives."""
    ir: CircuitIR
    mapping: MappingConfig
    topology: Topology
    substituted: int = 0
    routed: int = 0


def convert_to_dynamic(ir: CircuitIR, seed: int = 0, p: float = 0.5,
                       adjacency: dict[str, set[str]] | None = None) -> Dynamic:
    """Replace non-adjacent CNOTs by long-range CNOTs with probability ``p``.

    Data qubit i sits on controller i (mesh follows ``adjacency``, a line by
    default). Each substitution gets fresh ancillas hosted on the controllers
    along the path; CNOTs not picked are routed with SWAPs there and back.
    """
    adj = adjacency or line_adjacency(ir.qubits)
    rng = random.Random(seed)
    where = {q: i for i, q in enumerate(ir.qubits)}
    qubits, bits, body = list(ir.qubits), list(ir.bits), []
    drive = {q: Port(where[q], DRIVE_PORT) for q in ir.qubits}
    meas = {q: Port(where[q], MEASURE_PORT) for q in ir.qubits}
    used = {i: 1 for i in range(len(ir.qubits))}            # ancilla slots per controller
    subs = routed = 0
    for st in ir.body:
        if not (isinstance(st, Gate) and st.name == "cx" and st.qubits[1] not in adj[st.qubits[0]]):
            body.append(st)
            continue
        a, b = st.qubits
        path = _path(adj, a, b)
        if rng.random() < p:
            chain = [a]
            for hop in path[1:-1]:
                c = where[hop]
                name = f"anc{subs}_{len(chain)}"
                drive[name] = Port(c, 2 * used[c])
                meas[name] = Port(c, 2 * used[c] + 1)
                used[c] += 1
                qubits.append(name)
                chain.append(name)
            chain.append(b)
            mbits = [f"m{subs}_{i}" for i in range(1, len(chain) - 1)]
            bits += mbits
            body += long_range_cnot(chain, mbits)
            subs += 1
        else:
            swaps = [Gate("swap", (u, v)) for u, v in zip(path[:-2], path[1:-1])]
            body += swaps + [Gate("cx", (path[-2], b))] + swaps[::-1]
            routed += 1
    edges = sorted({tuple(sorted((where[u], where[v]))) for u in adj for v in adj[u]})
    ports = 2 * max(used.values())
    topo = Topology.balanced(len(ir.qubits), mesh_edges=edges,
                             node={"ports": max(8, ports),
                                   "capture": {2 * k + 1: CAPTURE_CYCLES for k in range(max(used.values()))}})
    out = CircuitIR(qubits, bits, body, ir.shots)
    out.validate()
    return Dynamic(out, MappingConfig(drive, meas), topo, subs, routed)


# ---------------------------------------------------- synthetic suite

def _ir(n: int, body: list[Statement]) -> CircuitIR:
    ir = CircuitIR([f"d{i}" for i in range(n)], [], body)
    ir.validate()
    return ir


def ghz(n: int = 8) -> CircuitIR:
    """Fan-out GHZ: one root drives every other qubit."""
    return _ir(n, [Gate("h", ("d0",))] + [Gate("cx", ("d0", f"d{i}")) for i in range(1, n)])


def qft(n: int = 8) -> CircuitIR:
    """QFT-shaped ladder: H then controlled phases (as CZ) to every later qubit."""
    body: list[Statement] = []
    for i in range(n):
        body.append(Gate("h", (f"d{i}",)))
        for j in range(i + 1, n):
            body += [Gate("cx", (f"d{j}", f"d{i}")), Gate("t", (f"d{i}",)), Gate("cx", (f"d{j}", f"d{i}"))]
    return _ir(n, body)


def bv(n: int = 8, secret: int | None = None) -> CircuitIR:
    """Bernstein-Vazirani star: every secret bit CNOTs into the last qubit."""
    secret = (1 << (n - 1)) - 1 if secret is None else secret
    t = f"d{n - 1}"
    body: list[Statement] = [Gate("x", (t,))] + [Gate("h", (f"d{i}",)) for i in range(n)]
    body += [Gate("cx", (f"d{i}", t)) for i in range(n - 1) if secret >> i & 1]
    body += [Gate("h", (f"d{i}",)) for i in range(n - 1)]
    return _ir(n, body)


def adder(n: int = 8) -> CircuitIR:
    """Ripple-carry shaped: majority blocks reaching two qubits ahead."""
    body: list[Statement] = []
    for i in range(0, n - 2, 2):
        a, b, c = f"d{i}", f"d{i + 1}", f"d{i + 2}"
        body += [Gate("cx", (c, b)), Gate("cx", (c, a)), Gate("t", (a,)), Gate("cx", (a, c))]
    for i in range(n - 3 - (n % 2), -1, -2):
        a, b, c = f"d{i}", f"d{i + 1}", f"d{i + 2}"
        body += [Gate("cx", (a, c)), Gate("tdg", (a,)), Gate("cx", (c, a)), Gate("cx", (a, b))]
    return _ir(n, body)


def qaoa(n: int = 8, layers: int = 2) -> CircuitIR:
    """MaxCut QAOA on a ring: the closing edge is long-range."""
    body: list[Statement] = [Gate("h", (f"d{i}",)) for i in range(n)]
    for _ in range(layers):
        for i in range(n):
            a, b = f"d{i}", f"d{(i + 1) % n}"
            body += [Gate("cx", (a, b)), Gate("z", (b,)), Gate("cx", (a, b))]
        body += [Gate("sx", (f"d{i}",)) for i in range(n)]
    return _ir(n, body)


def ising(n: int = 8, steps: int = 2) -> CircuitIR:
    """Trotterised Ising with next-nearest-neighbour couplings."""
    body: list[Statement] = []
    for _ in range(steps):
        for d in (1, 2):
            for i in range(n - d):
                a, b = f"d{i}", f"d{i + d}"
                body += [Gate("cx", (a, b)), Gate("s", (b,)), Gate("cx", (a, b))]
        body += [Gate("h", (f"d{i}",)) for i in range(n)]
    return _ir(n, body)


FAMILIES = {"ghz": ghz, "qft": qft, "bv": bv, "adder": adder, "qaoa": qaoa, "ising": ising}


# ---------------------------------------------------------- comparison

@dataclass
class BenchmarkSpec:
    kind: str = "suite"                      # suite | fig10-sync | long-range-cnot | dynamic-converted
    families: tuple[str, ...] = tuple(FAMILIES)
    qubits: int = 8
    chain: int = 5                            # long-range-cnot length
    seed: int = 0
    p: float = 0.5
    shots: int = 8
    grid_us: tuple[float, ...] = DEFAULT_GRID_US
    arity: int = 4
    mesh_latency: int = 4
    up: int = 4
    down: int = 4
    router_delay: int = 1
    star_latency: int = 32
    durations: Durations = field(default_factory=Durations)
    cycle_ns: int = 4
    modes: tuple[str, ...] = ("bisp", "lockstep")

    def validate(self) -> None:
        if self.kind not in ("suite", "fig10-sync", "long-range-cnot", "dynamic-converted"):
            raise ValueError(f"unknown benchmark kind {self.kind!r}")
        if not self.grid_us:
            raise ValueError("T1/T2 grid is empty")
        if self.kind == "long-range-cnot" and self.chain < 3:
            raise ValueError("long-range CNOT needs at least 3 qubits")
        for f in self.families:
            if f not in FAMILIES:
                raise ValueError(f"unknown family {f!r}")
        if set(self.modes) != {"bisp", "lockstep"}:
            raise ValueError("a comparison needs both modes")

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkSpec":
        d = dict(d)
        if "durations" in d:
            d["durations"] = Durations(**d["durations"])
        for k in ("families", "grid_us", "modes"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def topo_kw(self) -> dict:
        return dict(arity=self.arity, mesh_latency=self.mesh_latency, up=self.up, down=self.down,
                    router_delay=self.router_delay, star_latency=self.star_latency)


@dataclass
class ComparisonRow:
    benchmark: str
    t_us: float
    runtime_bisp_ns: float
    runtime_lockstep_ns: float
    reduction_pct: float
    infidelity_bisp: float
    infidelity_lockstep: float
    ratio: float

    FIELDS = ("benchmark", "t_us", "runtime_bisp_ns", "runtime_lockstep_ns", "reduction_pct",
              "infidelity_bisp", "infidelity_lockstep", "ratio")


def _with_latencies(topo: Topology, spec: BenchmarkSpec) -> Topology:
    topo.up = {c: spec.up for c in topo.up}
    topo.down = {c: spec.down for c in topo.down}
    topo.mesh = {e: spec.mesh_latency for e in topo.mesh}
    topo.router_delay, topo.star_latency = spec.router_delay, spec.star_latency
    return topo


def workloads(spec: BenchmarkSpec) -> list[tuple[str, CircuitIR, MappingConfig, Topology]]:
    if spec.kind == "long-range-cnot":
        ir = gen_long_range_cnot(spec.chain)
        return [(f"lrcnot{spec.chain}", ir, default_mapping(ir.qubits),
                 line_topology(spec.chain, **spec.topo_kw()))]
    if spec.kind == "fig10-sync":
        raise ValueError("fig10-sync has no BISP/lockstep comparison; use fig10_report")
    out = []
    for name in spec.families:
        dyn = convert_to_dynamic(FAMILIES[name](spec.qubits), seed=spec.seed, p=spec.p)
        out.append((name, dyn.ir, dyn.mapping, _with_latencies(dyn.topology, spec)))
    return out


def simulate(ir, mapping, topo, mode: str, spec: BenchmarkSpec) -> RunReport:
    comp = compile_circuit(ir, topo, mapping, mode, spec.durations, spec.cycle_ns)
    cfg = SimConfig(topo, comp.programs, spec.cycle_ns, spec.durations,
                    RandomOutcomes(spec.seed), mode, spec.shots)
    return (run if mode == "bisp" else run_lockstep)(cfg)[1]


def run_comparison(spec: BenchmarkSpec, csv_path=None) -> list[ComparisonRow]:
    """One row per (benchmark, grid point); T1 = T2 = grid value."""
    spec.validate()
    rows = []
    for name, ir, mapping, topo in workloads(spec):
        bisp = simulate(ir, mapping, topo, "bisp", spec)
        lock = simulate(ir, mapping, topo, "lockstep", spec)
        rb, rl = bisp.runtime_ns, lock.runtime_ns
        for t in spec.grid_us:
            fb = estimate_fidelity(bisp, t * 1e-6, t * 1e-6)
            fl = estimate_fidelity(lock, t * 1e-6, t * 1e-6)
            rows.append(ComparisonRow(name, t, rb, rl, 100.0 * (1 - rb / rl) if rl else 0.0,
                                      fb, fl, fl / fb if fb else float("nan")))
    if csv_path is not None:
        write_csv(rows, csv_path)
    return rows


def write_csv(rows: list[ComparisonRow], sink) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ComparisonRow.FIELDS)
    for r in rows:
        w.writerow([r.benchmark, f"{r.t_us:g}", f"{r.runtime_bisp_ns:.1f}", f"{r.runtime_lockstep_ns:.1f}",
                    f"{r.reduction_pct:.4f}", f"{r.infidelity_bisp:.8e}", f"{r.infidelity_lockstep:.8e}",
                    f"{r.ratio:.6f}"])
    text = buf.getvalue()
    if hasattr(sink, "write"):
        sink.write(text)
    elif sink is not None:
        Path(sink).write_text(text)
    return text


def mean_reduction(rows: list[ComparisonRow]) -> float:
    seen = {}
    for r in rows:
        seen.setdefault(r.benchmark, r.reduction_pct)
    return sum(seen.values()) / len(seen) if seen else 0.0
