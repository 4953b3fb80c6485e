"""ASAP scheduling in controller-local frames, plus sync booking.

All internal times are cycles on a *nominal* timeline: the one every
controller would follow if every feedback datum arrived exactly when
estimated. Each controller's timeline is cut into frames at its
non-deterministic boundaries (feedback branches, syncs); inside a frame the
compiled waits reproduce nominal differences exactly.

Reported ``ScheduledOp.start_ns`` values are relative to the shot-start
synchronization point.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from ..fabric import Topology
from ..isa import CENTRAL_ADDR
from ..sim import Durations
from .ir import Barrier, CircuitIR, Conditional, Gate, Measure
from .mapping import MappingConfig

MARGIN = 4  # extra cycles on the shot-start grant


class ScheduleError(ValueError):
    pass


@dataclass
class ScheduledOp:
    op: Gate | Measure
    start_ns: int
    duration_ns: int
    controllers: tuple[int, ...]
    sync: str = "none"                 # none | nearby | region
    conditional: int | None = None     # index of the enclosing conditional
    label: str = ""


@dataclass
class SyncRequest:
    kind: str                          # nearby | region
    nodes: tuple[int, ...]
    target: dict[int, int]             # per node: peer id or router id
    point: int                         # nominal resumption cycle T
    ready: dict[int, int]              # per node: earliest the synced op could start
    latency: int = 0                   # nearby link latency N


@dataclass
class SyncPoint(SyncRequest):
    booking: dict[int, int] = field(default_factory=dict)    # per node: cycle the sync instruction sits at
    predicted_overhead: int = 0


# ------------------------------------------------------------------ items

@dataclass
class Emit:
    time: int
    port: int
    codeword: int
    label: str


@dataclass
class SyncItem:
    time: int
    request: int                       # index into Schedule.syncs


@dataclass
class Capture:
    """Forward a local measurement result: recv from self, cache, send on."""
    time: int                          # T_op after the block
    slot: int
    dests: list[int]


@dataclass
class Fetch:
    slot: int
    src: int
    arrival: int                       # nominal arrival cycle
    exec: int = 0                      # nominal cycle the recv retires


@dataclass
class Branch:
    """Frame terminator: gather bits, branch on their parity, run the body."""
    ready: int                         # T_op is raised to this before the first recv
    start: int                         # nominal T_op at the first body op
    slots: list[int]
    value: int
    body: list[Emit]                   # times relative to ``start``
    span: int
    lockstep: bool
    index: int
    fetch: list[Fetch] = field(default_factory=list)


@dataclass
class Segment:
    items: list = field(default_factory=list)
    branch: Branch | None = None


@dataclass
class BitVersion:
    slot: int
    bit: str
    controller: int
    cap: int = 0                       # nominal capture arrival
    exec: int = 0                      # nominal cycle the forwarding recv retires
    post: int = 0                      # nominal T_op after the forwarding block
    dests: list[int] = field(default_factory=list)
    consumers: set[int] = field(default_factory=set)
    arrivals: dict[int, int] = field(default_factory=dict)   # receiving controller -> nominal cycle


@dataclass
class Schedule:
    ir: CircuitIR
    mapping: MappingConfig
    topology: Topology
    durations: Durations
    cycle_ns: int
    mode: str
    preamble: int
    controllers: list[int]
    ops: list[ScheduledOp] = field(default_factory=list)
    syncs: list[SyncRequest] = field(default_factory=list)
    segments: dict[int, list[Segment]] = field(default_factory=dict)
    versions: list[BitVersion] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)
    synced: bool = False
    hints: dict[tuple, int] = field(default_factory=dict)

    @property
    def shots(self) -> int:
        return self.ir.shots

    def depth_ns(self, until_conditional: bool = False) -> int:
        """Latest op end; optionally only over ops before the first conditional."""
        ops = self.ops
        if until_conditional:
            first = next((i for i, o in enumerate(ops) if o.conditional is not None), len(ops))
            ops = ops[:first]
        return max((o.start_ns + o.duration_ns for o in ops), default=0)


def label_of(op: Gate | Measure) -> str:
    if isinstance(op, Measure):
        return f"measure {op.qubit}"
    return f"{op.name} {','.join(op.qubits)}"


def shot_start(topo: Topology, controllers: list[int]) -> tuple[int, int | None]:
    """Preamble length P and the region router, chosen so the shot-start sync costs nothing.

    The sync request leaves on pipeline cycle 1 (after ``waiti P``).
    """
    if len(controllers) < 2:
        return 0, None
    r = topo.lca(controllers)
    up = max(topo.up_latency(c, r) for c in controllers)
    down = max(topo.down_latency(r, c) for c in controllers)
    return 1 + up + 2 * topo.router_delay + down + MARGIN, r


def _branch_tail(nbits: int) -> int:
    # instructions from the last recv to the first body cw: sw, addi,
    # (lw, xor) per bit, waiti, beq, waiti, cw
    return 2 * nbits + 6


class _Scheduler:
    def __init__(self, ir: CircuitIR, mapping: MappingConfig, topo: Topology,
                 durations: Durations, cycle_ns: int, mode: str, hints: dict | None = None):
        if mode not in ("bisp", "lockstep"):
            raise ScheduleError(f"unknown mode {mode!r}")
        durations.check(cycle_ns)
        ir.validate()
        mapping.check(ir, topo)
        self.ir, self.map, self.topo, self.mode = ir, mapping, topo, mode
        self.cyc = cycle_ns
        self.dur = durations
        ctrls = sorted({mapping.controller(q) for q in ir.qubits})
        p, self.region = shot_start(topo, ctrls)
        self.s = Schedule(ir, mapping, topo, durations, cycle_ns, mode, p, ctrls, hints=dict(hints or {}))
        self.hints = self.s.hints
        self.ready = {q: p for q in ir.qubits}
        self.anchor = {c: p for c in ctrls}
        self.last = {c: p for c in ctrls}          # latest item time in the open segment
        self.frame = {c: 0 for c in ctrls}
        self.common: dict[frozenset, tuple[int, int]] = {}
        self.seg = {c: [Segment()] for c in ctrls}
        self.s.segments = self.seg
        self.current: dict[str, BitVersion] = {}
        self.received: dict[int, set[int]] = {c: set() for c in ctrls}
        self.cap_free = {c: 0 for c in ctrls}      # pipeline free of forwarding work
        self.last_post = {c: 0 for c in ctrls}
        self.n_branch = 0

    # ------------------------------------------------------------ helpers
    def cycles(self, name: str, nq: int = 1) -> int:
        return self.dur.of(name, nq) // self.cyc

    def lead(self, c: int) -> int:
        return self.topo.controllers[c].recv_lead

    def add(self, c: int, item) -> None:
        self.seg[c][-1].items.append(item)
        self.last[c] = max(self.last[c], item.time)

    def record(self, op, start: int, ctrls, sync="none", cond=None) -> None:
        n = len(op.qubits) if isinstance(op, Gate) else 1
        name = op.name if isinstance(op, Gate) else "measure"
        self.s.ops.append(ScheduledOp(op, (start - self.s.preamble) * self.cyc, self.dur.of(name, n),
                                      tuple(sorted(set(ctrls))), sync, cond, label_of(op)))

    def emits(self, g: Gate, start: int) -> list[tuple[int, Emit]]:
        out = []
        if len(g.qubits) == 1:
            q = g.qubits[0]
            out.append((self.map.controller(q), Emit(start, self.map.drive[q].port, self.map.codeword(g.name), label_of(g))))
        else:
            for q, role in zip(g.qubits, "ct"):
                out.append((self.map.controller(q), Emit(start, self.map.drive[q].port,
                                                         self.map.codeword(g.name, role), label_of(g))))
        return out

    # ----------------------------------------------------------- pre-pass
    def plan_versions(self) -> dict[int, BitVersion]:
        """Allocate one cache slot per measurement and find who consumes it."""
        by_stmt: dict[int, BitVersion] = {}
        cur: dict[str, BitVersion] = {}
        everyone = set(self.s.controllers)
        for i, st in enumerate(self.ir.body):
            if isinstance(st, Measure):
                v = BitVersion(len(self.s.versions), st.bit, self.map.controller(st.qubit))
                self.s.versions.append(v)
                by_stmt[i] = v
                cur[st.bit] = v
            elif isinstance(st, Conditional):
                users = everyone if self.mode == "lockstep" else {
                    self.map.controller(q) for g in st.body for q in g.qubits}
                for b in st.bits:
                    cur[b].consumers |= users
        for v in self.s.versions:
            others = sorted(v.consumers - {v.controller})
            if self.mode == "lockstep":
                v.dests = [CENTRAL_ADDR] if v.consumers else []
            else:
                v.dests = others
        return by_stmt

    # ------------------------------------------------------------ driver
    def run(self) -> Schedule:
        if self.region is not None:
            # shot-start region sync; the synced "op" is the start of the shot
            p = self.s.preamble
            idx = len(self.s.syncs)
            self.s.syncs.append(SyncRequest("region", tuple(self.s.controllers),
                                            {c: self.region for c in self.s.controllers}, p,
                                            {c: p for c in self.s.controllers}))
            if self.mode == "bisp":
                for c in self.s.controllers:
                    self.add(c, SyncItem(p, idx))
        versions = self.plan_versions()
        for i, st in enumerate(self.ir.body):
            if isinstance(st, Gate):
                self.gate(st)
            elif isinstance(st, Measure):
                self.measure(st, versions[i])
            elif isinstance(st, Barrier):
                t = max(self.ready[q] for q in st.qubits)
                for q in st.qubits:
                    self.ready[q] = t
            elif self.mode == "bisp":
                self.branch_bisp(st)
            else:
                self.branch_lockstep(st)
        return self.s

    def gate(self, g: Gate) -> None:
        ctrls = [self.map.controller(q) for q in g.qubits]
        earliest = max(max(self.ready[q] for q in g.qubits), max(self.anchor[c] for c in ctrls))
        start, sync = earliest, "none"
        if len(g.qubits) == 2:
            self.map.check_pair(*g.qubits, self.topo)
            a, b = ctrls
            if a != b:
                key = frozenset((a, b))
                state = (self.frame[min(a, b)], self.frame[max(a, b)])
                if self.mode == "bisp" and self.common.get(key, (0, 0)) != state:
                    start, sync = self.nearby(g, a, b), "nearby"
        for c, e in self.emits(g, start):
            self.add(c, e)
        d = self.cycles(g.name, len(g.qubits))
        for q in g.qubits:
            self.ready[q] = start + d
        self.record(g, start, ctrls, sync)

    def nearby(self, g: Gate, a: int, b: int) -> int:
        n = self.topo.mesh_latency(a, b)
        ready = {c: max(self.anchor[c], *(self.ready[q] for q in g.qubits if self.map.controller(q) == c))
                 for c in (a, b)}
        # the sync may not be booked before the frame began
        start = max(*ready.values(), self.anchor[a] + n, self.anchor[b] + n)
        idx = len(self.s.syncs)
        self.s.syncs.append(SyncRequest("nearby", (a, b), {a: b, b: a}, start, ready, n))
        for c in (a, b):
            self.add(c, SyncItem(start - n, idx))
            self.frame[c] += 1
            self.anchor[c] = start
        self.common[frozenset((a, b))] = (self.frame[min(a, b)], self.frame[max(a, b)])
        return start

    def measure(self, m: Measure, v: BitVersion) -> None:
        c = self.map.controller(m.qubit)
        port = self.map.measure[m.qubit].port
        start = max(self.ready[m.qubit], self.anchor[c])
        self.add(c, Emit(start, port, self.map.codeword("measure"), label_of(m)))
        self.ready[m.qubit] = start + self.cycles("measure")
        v.cap = start + self.topo.controllers[c].capture[port]
        if v.consumers:
            # T_op is raised to ``post`` before the recv so the recv never
            # re-anchors it; posts stay monotone so forwarding follows
            # program order on every channel
            tail = 3 + len(v.dests)  # sw, sends, waiti, next cw
            v.exec = max(v.cap, self.cap_free[c], self.hints.get(("cap", v.slot), 0))
            v.post = max(v.exec + max(self.lead(c), tail), self.last_post[c])
            self.cap_free[c] = v.exec + 3 + len(v.dests)  # recv, sw, sends, waiti
            self.last_post[c] = v.post
            self.add(c, Capture(v.post, v.slot, list(v.dests)))
            v.arrivals = {d: self.arrival(v, d) for d in sorted(v.consumers - {c})}
        self.current[m.bit] = v
        self.record(m, start, [c])

    def arrival(self, v: BitVersion, dst: int) -> int:
        # recv, sw, then one send per cycle
        if self.mode == "lockstep":
            return v.exec + 2 + 2 * self.topo.star_latency
        i = v.dests.index(dst) + 1
        return v.exec + 1 + i + self.topo.datum_latency(v.controller, dst)

    def fetches(self, c: int, vers: list[BitVersion]) -> list[Fetch]:
        """Recvs controller ``c`` issues for ``vers``.

        A source-matched recv takes the oldest datum from that source, so
        earlier data on the same channel are drained (and cached) first.
        Each recv plus its store costs two pipeline cycles.
        """
        out: list[Fetch] = []
        for v in vers:
            if v.controller == c or v.slot in self.received[c]:
                continue
            for u in self.s.versions[:v.slot + 1]:
                if u.controller == v.controller and c in u.arrivals and u.slot not in self.received[c]:
                    out.append(Fetch(u.slot, u.controller, u.arrivals[c]))
                    self.received[c].add(u.slot)
        prev = None
        for f in out:
            f.exec = max(f.arrival, self.hints.get(("fetch", c, f.slot), 0))
            if prev is not None:
                f.exec = max(f.exec, prev + 2)
            prev = f.exec
        return out

    def after_fetch(self, c: int, ready: int, fetch: list[Fetch]) -> int:
        return max(ready, *(f.exec + self.lead(c) for f in fetch)) if fetch else ready

    def body_times(self, body, ctrls: set[int], start: dict[int, int]) -> list[tuple[int, Gate, int]]:
        local = {}
        out = []
        for g in body:
            c = self.map.controller(g.qubits[0])
            if len(g.qubits) == 2 and self.map.controller(g.qubits[1]) != c:
                raise ScheduleError(f"conditional two-qubit gate {label_of(g)} spans controllers")
            if c not in ctrls:
                continue
            t = max(start[c], *(local.get(q, start[c]) for q in g.qubits))
            d = self.cycles(g.name, len(g.qubits))
            for q in g.qubits:
                local[q] = t + d
            out.append((c, g, t))
        return out

    def branch_bisp(self, st: Conditional) -> None:
        vers = [self.current[b] for b in st.bits]
        ctrls = sorted({self.map.controller(q) for g in st.body for q in g.qubits})
        k = self.n_branch
        self.n_branch += 1
        starts, ready, fetch = {}, {}, {}
        for c in ctrls:
            qs = {q for g in st.body for q in g.qubits if self.map.controller(q) == c}
            ready[c] = max(self.anchor[c], self.last[c], *(self.ready[q] for q in qs))
            fetch[c] = self.fetches(c, vers)
            starts[c] = self.after_fetch(c, ready[c], fetch[c]) + max(1, _branch_tail(len(vers)) - self.lead(c))
        self.close(st, ctrls, starts, ready, fetch, vers, k, lockstep=False)

    def branch_lockstep(self, st: Conditional) -> None:
        vers = [self.current[b] for b in st.bits]
        ctrls = self.s.controllers
        k = self.n_branch
        self.n_branch += 1
        g = max(*self.anchor.values(), *self.last.values(), *self.ready.values())
        fetch = {c: self.fetches(c, vers) for c in ctrls}
        # every controller is raised to a common level before its recvs, so
        # the recvs never move T_op and all flows stay in step
        level = max(self.after_fetch(c, g, fetch[c]) for c in ctrls)
        s = level + max(1, _branch_tail(len(vers)) - min(self.lead(c) for c in ctrls))
        self.close(st, ctrls, {c: s for c in ctrls}, {c: level for c in ctrls}, fetch, vers, k, lockstep=True)

    def close(self, st: Conditional, ctrls, starts, ready, fetch, vers, k, lockstep: bool) -> None:
        timed = self.body_times(st.body, set(ctrls), starts)
        ends = {c: starts[c] for c in ctrls}
        for c, g, t in timed:
            ends[c] = max(ends[c], t + self.cycles(g.name, len(g.qubits)))
        if lockstep:
            span = max(ends[c] - starts[c] for c in ctrls)
            spans = {c: span for c in ctrls}
        else:
            spans = {c: ends[c] - starts[c] for c in ctrls}
        for c in ctrls:
            body = [e for cc, g, t in timed if cc == c
                    for owner, e in self.emits(g, t - starts[c]) if owner == c]
            br = Branch(ready[c], starts[c], [v.slot for v in vers], st.value, body, spans[c], lockstep, k,
                        fetch[c])
            seg = self.seg[c][-1]
            seg.branch = br
            self.seg[c].append(Segment())
            self.frame[c] += 1
            self.anchor[c] = self.last[c] = starts[c] + spans[c]
        for c, g, t in timed:
            for q in g.qubits:
                self.ready[q] = t + self.cycles(g.name, len(g.qubits))
            self.record(g, t, [c], cond=k)


def schedule(ir: CircuitIR, mapping: MappingConfig, topology: Topology,
             durations: Durations | None = None, mode: str = "bisp", cycle_ns: int = 4,
             hints: dict | None = None) -> Schedule:
    """ASAP schedule; ties follow statement order, then qubit index.

    ``hints`` raises the assumed retire cycle of individual recvs, keyed
    ``("cap", slot)`` or ``("fetch", controller, slot)``.  Code generation
    reports where the pipeline would retire a recv later than assumed.
    """
    return _Scheduler(ir, mapping, topology, durations or Durations(), cycle_ns, mode, hints).run()


def insert_sync(sched: Schedule) -> Schedule:
    """Book every sync request: nearby syncs sit exactly N cycles before their point.

    Booking earlier than T - N buys nothing (the barrier lands at B + N) and
    booking before the frame began is unsound, so the scheduler already
    pushed T out to anchor + N where the prefix was too short.
    """
    out = []
    for req in sched.syncs:
        if req.kind == "nearby":
            booking = {c: req.point - req.latency for c in req.nodes}
        else:
            booking = {c: req.point for c in req.nodes}
        latest = max(req.ready.values())
        over = req.point - latest
        sp = SyncPoint(req.kind, req.nodes, req.target, req.point, req.ready, req.latency,
                       booking=booking, predicted_overhead=over)
        if over > 0:
            sched.diagnostics.append(
                f"{req.kind} sync {sorted(req.nodes)} at cycle {req.point}: margin "
                f"{req.latency - over} < {req.latency}, predicted overhead {over} cycles")
        out.append(sp)
    sched.syncs = out
    sched.synced = True
    return sched
