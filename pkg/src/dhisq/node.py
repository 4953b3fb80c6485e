"""One HISQ controller: classical pipeline, TCU, SyncU and MsgU.

Time has two views. ``local`` is the TCU timer, which the SyncU may pause;
timeline stamps (``t_op``, queue entries) are in local cycles. Global
cycles are what the fabric and traces see: ``global = local + offset``,
where ``offset`` accumulates every paused cycle.
"""
from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass, field

from .fabric import Message, NodeSpec, Topology
from .isa import ANY_SOURCE, CENTRAL_ADDR, Program, is_router_addr

MASK32 = 0xFFFFFFFF
MEM_SIZE = 4096


class NodeFault(RuntimeError):
    def __init__(self, node: int, pc: int, msg: str):
        self.node, self.pc = node, pc
        super().__init__(f"node {node} pc {pc}: {msg}")


def _slack(note: str | None) -> int | None:
    """Compiler hint on a nearby sync: the node's real sync point is B + slack."""
    for tok in (note or "").split():
        if tok.startswith("slack="):
            return int(tok[6:])
    return None


def _s32(v: int) -> int:
    v &= MASK32
    return v - (1 << 32) if v & 0x80000000 else v


@dataclass
class TimedEvent:
    stamp: int
    port: int
    codeword: int
    note: str | None = None


@dataclass
class SyncRecord:
    """Bookkeeping for one executed sync; all cycles are global."""

    node: int
    mode: str                 # 'nearby' | 'remote'
    target: int
    booking: int              # B: cycle the pulse/request left the node
    latency: int              # N (nearby) or uplink latency to the target router (remote)
    proposed: int             # T: earliest point this node could resume
    peer_arrival: int | None = None
    granted: int | None = None
    resumed: int | None = None
    index: int = 0            # per (node, target) occurrence counter


@dataclass
class TraceRecord:
    cycle: int
    node: int
    port: int
    codeword: int
    label: str = ""
    shot: int = 0

    def time_ns(self, cycle_ns: int = 4) -> int:
        return self.cycle * cycle_ns


@dataclass
class _Barrier:
    stamp: int                # local cycle at which the timer must hold
    record: SyncRecord
    link: int | None = None   # nearby: peer id
    group: int | None = None  # remote: router address


@dataclass
class Controller:
    spec: NodeSpec
    program: Program
    topo: Topology
    mem_size: int = MEM_SIZE
    regs: list[int] = field(default_factory=lambda: [0] * 32)
    pc: int = 0
    t_op: int = 0
    local: int = 0
    offset: int = 0
    stall: str | None = None
    late_issues: int = 0
    outcomes: object = None   # (node, port, codeword, k) -> measurement bit
    diagnostics: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.id = self.spec.id
        self.mem = bytearray(self.mem_size)
        self.queues: dict[int, deque[TimedEvent]] = {p: deque() for p in range(self.spec.ports)}
        self.sync_events: deque[tuple[int, int, int | None]] = deque()  # (stamp, link, slack)
        self.barriers: list[_Barrier] = []
        self.flags: dict[int, int] = {}
        self.grants: dict[int, deque[tuple[int, int]]] = {}     # group -> (T_m, arrival)
        self.inbox: list[tuple[int, int, int, int]] = []          # (arrival, origin, seq, word)
        self._inbox_seq = 0
        self.records: list[SyncRecord] = []
        self._sync_count: dict[int, int] = {}
        self.capture_count: dict[int, int] = {}
        self.next_issue = 0
        self.retired = 0

    # ------------------------------------------------------------ status
    @property
    def pipeline_done(self) -> bool:
        return self.pc >= len(self.program.instructions)

    @property
    def done(self) -> bool:
        return (self.pipeline_done and not self.barriers and not self.sync_events
                and not any(self.queues.values()))

    def global_now(self) -> int:
        return self.local + self.offset

    # ----------------------------------------------------------- inbound
    def receive(self, msg: Message) -> None:
        if msg.kind == "pulse":
            n = self.flags.get(msg.src, 0) + 1
            self.flags[msg.src] = n
            if n > 1:
                self.diagnostics.append(f"cycle {msg.arrival}: sync flag overrun on link {msg.src}")
            for b in self.barriers:
                if b.link == msg.src and b.record.peer_arrival is None:
                    b.record.peer_arrival = msg.arrival
                    break
        elif msg.kind == "grant":
            self.grants.setdefault(msg.group, deque()).append((msg.value, msg.arrival))
        elif msg.kind == "datum":
            origin = msg.origin if msg.origin >= 0 else msg.src
            self.inbox.append((msg.arrival, origin, self._inbox_seq, msg.value))
            self._inbox_seq += 1
        else:
            raise NodeFault(self.id, self.pc, f"unexpected {msg.kind} message")

    def deposit_capture(self, arrival: int, bit: int) -> None:
        self.inbox.append((arrival, self.id, self._inbox_seq, bit))
        self._inbox_seq += 1

    # ---------------------------------------------------------- pipeline
    def _timeline_stamp(self) -> int:
        """Current T_op, slipped forward if the pipeline fell behind the timer."""
        if self.t_op < self.local:
            self.late_issues += 1
            self.diagnostics.append(
                f"cycle {self.global_now()}: pc {self.pc} issued late (T_op {self.t_op} < timer {self.local})")
            self.t_op = self.local
        return self.t_op

    def _fault(self, msg: str):
        raise NodeFault(self.id, self.pc, msg)

    def _load(self, addr: int, size: int, signed: bool) -> int:
        if addr < 0 or addr + size > len(self.mem):
            self._fault(f"load address {addr:#x} out of range")
        v = int.from_bytes(self.mem[addr:addr + size], "little")
        if signed and v & (1 << (8 * size - 1)):
            v -= 1 << (8 * size)
        return v & MASK32

    def _store(self, addr: int, size: int, value: int) -> None:
        if addr < 0 or addr + size > len(self.mem):
            self._fault(f"store address {addr:#x} out of range")
        self.mem[addr:addr + size] = (value & ((1 << (8 * size)) - 1)).to_bytes(size, "little")

    def _set(self, rd: int, value: int) -> None:
        if rd:
            self.regs[rd] = value & MASK32

    def step_pipeline(self, now: int) -> list[Message]:
        """Execute at most one instruction at global cycle ``now``."""
        if self.pipeline_done or now < self.next_issue:
            return []
        ins = self.program.instructions[self.pc]
        out: list[Message] = []
        ok = self._execute(ins, now, out)
        if ok:
            self.stall = None
            self.retired += 1
            self.next_issue = now + self.spec.pipeline_ratio
        return out

    def _execute(self, ins, now: int, out: list[Message]) -> bool:
        mn, a, r = ins.mnemonic, ins.args, self.regs
        nxt = self.pc + 1
        if mn == "add":
            self._set(a[0], r[a[1]] + r[a[2]])
        elif mn == "sub":
            self._set(a[0], r[a[1]] - r[a[2]])
        elif mn == "sll":
            self._set(a[0], r[a[1]] << (r[a[2]] & 31))
        elif mn == "slt":
            self._set(a[0], int(_s32(r[a[1]]) < _s32(r[a[2]])))
        elif mn == "sltu":
            self._set(a[0], int(r[a[1]] < r[a[2]]))
        elif mn == "xor":
            self._set(a[0], r[a[1]] ^ r[a[2]])
        elif mn == "srl":
            self._set(a[0], r[a[1]] >> (r[a[2]] & 31))
        elif mn == "sra":
            self._set(a[0], _s32(r[a[1]]) >> (r[a[2]] & 31))
        elif mn == "or":
            self._set(a[0], r[a[1]] | r[a[2]])
        elif mn == "and":
            self._set(a[0], r[a[1]] & r[a[2]])
        elif mn == "addi":
            self._set(a[0], r[a[1]] + a[2])
        elif mn == "slti":
            self._set(a[0], int(_s32(r[a[1]]) < a[2]))
        elif mn == "sltiu":
            self._set(a[0], int(r[a[1]] < (a[2] & MASK32)))
        elif mn == "xori":
            self._set(a[0], r[a[1]] ^ (a[2] & MASK32))
        elif mn == "ori":
            self._set(a[0], r[a[1]] | (a[2] & MASK32))
        elif mn == "andi":
            self._set(a[0], r[a[1]] & (a[2] & MASK32))
        elif mn == "slli":
            self._set(a[0], r[a[1]] << a[2])
        elif mn == "srli":
            self._set(a[0], r[a[1]] >> a[2])
        elif mn == "srai":
            self._set(a[0], _s32(r[a[1]]) >> a[2])
        elif mn == "lui":
            self._set(a[0], a[1] << 12)
        elif mn == "auipc":
            self._set(a[0], 4 * self.pc + (a[1] << 12))
        elif mn in ("lb", "lh", "lw", "lbu", "lhu"):
            size = {"b": 1, "h": 2, "w": 4}[mn[1]]
            self._set(a[0], self._load((r[a[2]] + a[1]) & MASK32, size, not mn.endswith("u")))
        elif mn in ("sb", "sh", "sw"):
            size = {"b": 1, "h": 2, "w": 4}[mn[1]]
            self._store((r[a[2]] + a[1]) & MASK32, size, r[a[0]])
        elif mn in ("beq", "bne", "blt", "bge", "bltu", "bgeu"):
            x, y = r[a[0]], r[a[1]]
            taken = {"beq": x == y, "bne": x != y, "blt": _s32(x) < _s32(y),
                     "bge": _s32(x) >= _s32(y), "bltu": x < y, "bgeu": x >= y}[mn]
            if taken:
                nxt = a[2]
        elif mn == "jal":
            self._set(a[0], 4 * (self.pc + 1))
            nxt = a[1]
        elif mn == "jalr":
            addr = (r[a[2]] + a[1]) & MASK32 & ~1
            if addr % 4 or addr // 4 > len(self.program.instructions):
                self._fault(f"jalr to invalid address {addr:#x}")
            self._set(a[0], 4 * (self.pc + 1))
            nxt = addr // 4
        elif mn == "waiti":
            self.t_op += a[0]
        elif mn == "waitr":
            v = r[a[0]]
            if v & 0x80000000:
                self._fault(f"negative wait duration {_s32(v)}")
            self.t_op += v
        elif mn.startswith("cw."):
            port = a[0] if mn[3] == "i" else r[a[0]]
            cw = a[1] if mn[5] == "i" else r[a[1]]
            if not 0 <= port < self.spec.ports:
                self._fault(f"port {port} invalid for a {self.spec.ports}-port node")
            q = self.queues[port]
            if len(q) >= self.spec.queue_depth:
                self._fault(f"event queue overflow on port {port}")
            stamp = self._timeline_stamp()
            if q and q[-1].stamp > stamp:
                self._fault("event stamps out of order")
            if q and q[-1].stamp == stamp:
                self._fault(f"two events on port {port} at cycle {stamp}")
            q.append(TimedEvent(stamp, port, cw & 0xFFFF, ins.note))
        elif mn == "sync":
            tgt = a[0]
            if is_router_addr(tgt):
                if not self._issue_remote_sync(tgt, now, out):
                    self.stall = "sync-wait"
                    return False
            else:
                if self.topo.mesh_latency(self.id, tgt) is None:
                    self._fault(f"sync target {tgt} is not a mesh neighbour")
                self.sync_events.append((self._timeline_stamp(), tgt, _slack(ins.note)))
        elif mn == "send":
            tgt = a[0]
            if tgt != CENTRAL_ADDR and tgt not in self.topo.controllers:
                self._fault(f"unroutable send target {tgt}")
            lat = self.topo.datum_latency(self.id, tgt)
            out.append(Message("datum", self.id, tgt, now, now + lat, r[a[1]], origin=self.id))
        elif mn == "recv":
            src = a[1]
            pick = None
            for i, item in enumerate(self.inbox):
                if item[0] <= now and (src == ANY_SOURCE or item[1] == src):
                    if pick is None or item[:3] < self.inbox[pick][:3]:
                        pick = i
            if pick is None:
                self.stall = "recv-wait"
                return False
            word = self.inbox.pop(pick)[3]
            self._set(a[0], word)
            self.t_op = max(self.t_op, self.local + self.spec.recv_lead)
        else:
            self._fault(f"cannot execute {mn}")
        self.pc = nxt
        return True

    def _issue_remote_sync(self, router: int, now: int, out: list[Message]) -> bool:
        if router not in self.topo.ancestors(self.id):
            self._fault(f"sync router {router} is not an ancestor")
        # the proposed point is only expressible globally once earlier syncs are settled
        if self.barriers or self.sync_events:
            return False
        stamp = self._timeline_stamp()
        t_global = stamp + self.offset
        up = self.topo.up[self.id]
        rec = SyncRecord(self.id, "remote", router, now, self.topo.up_latency(self.id, router),
                         t_global, index=self._bump(router))
        self.records.append(rec)
        out.append(Message("request", self.id, self.topo.parent[self.id], now, now + up,
                           t_global, router))
        self._add_barrier(_Barrier(stamp, rec, group=router))
        return True

    def _bump(self, tgt: int) -> int:
        n = self._sync_count.get(tgt, 0)
        self._sync_count[tgt] = n + 1
        return n

    def _add_barrier(self, b: _Barrier) -> None:
        keys = [x.stamp for x in self.barriers]
        self.barriers.insert(bisect.bisect_right(keys, b.stamp), b)

    # --------------------------------------------------------------- TCU
    def tcu_tick(self, now: int) -> tuple[list[TraceRecord], list[Message]]:
        """Advance the TCU by one global cycle."""
        assert now == self.local + self.offset, "node clock out of step with the engine"
        while self.barriers and self.barriers[0].stamp == self.local:
            b = self.barriers[0]
            if not self._barrier_ready(b, now):
                self.offset += 1
                return [], []
            b.record.resumed = now
            self.barriers.pop(0)
        assert not self.barriers or self.barriers[0].stamp > self.local, "timer passed a sync barrier"

        records, out = [], []
        for port, q in self.queues.items():
            if q and q[0].stamp == self.local:
                ev = q.popleft()
                records.append(TraceRecord(now + self.spec.trigger_delay, self.id, port, ev.codeword,
                                           ev.note or ""))
                if port in self.spec.capture:
                    k = self.capture_count.get(port, 0)
                    self.capture_count[port] = k + 1
                    bit = self.outcomes(self.id, port, ev.codeword, k) if self.outcomes else 0
                    self.deposit_capture(now + self.spec.capture[port], bit)
            assert not q or q[0].stamp > self.local, f"node {self.id} missed an event stamp"
        while self.sync_events and self.sync_events[0][0] == self.local:
            _, link, slack = self.sync_events.popleft()
            n = self.topo.mesh_latency(self.id, link)
            ready = now + (n if slack is None else min(slack, n))
            rec = SyncRecord(self.id, "nearby", link, now, n, ready, index=self._bump(link))
            self.records.append(rec)
            out.append(Message("pulse", self.id, link, now, now + n))
            self._add_barrier(_Barrier(self.local + n, rec, link=link))
        self.local += 1
        return records, out

    def _barrier_ready(self, b: _Barrier, now: int) -> bool:
        if b.link is not None:
            if self.flags.get(b.link, 0) > 0:
                self.flags[b.link] -= 1
                return True
            return False
        q = self.grants.get(b.group)
        if not q:
            return False
        t_m, arrival = q[0]
        b.record.granted = t_m
        if now < t_m:
            return False
        q.popleft()
        return True

    # ----------------------------------------------------- fast-forwarding
    def next_activity(self, now: int) -> int | None:
        """Earliest global cycle >= ``now`` at which the TCU can change state
        without outside input; None if it is waiting on a message."""
        if self.barriers and self.barriers[0].stamp == self.local:
            b = self.barriers[0]
            if b.link is not None:
                return now if self.flags.get(b.link, 0) else None
            q = self.grants.get(b.group)
            return max(now, q[0][0]) if q else None
        stamps = [q[0].stamp for q in self.queues.values() if q]
        if self.sync_events:
            stamps.append(self.sync_events[0][0])
        if self.barriers:
            stamps.append(self.barriers[0].stamp)
        if not stamps:
            return None
        return now + (min(stamps) - self.local)

    def pipeline_idle(self) -> bool:
        return self.pipeline_done or self.stall is not None

    def wake_time(self, now: int) -> int | None:
        """Next cycle a stalled recv could succeed from already-scheduled captures."""
        future = [item[0] for item in self.inbox if item[0] > now]
        if self.stall == "recv-wait" and self.inbox:
            if any(item[0] <= now for item in self.inbox):
                return now
            return min(future)
        return None

    def skip(self, cycles: int) -> None:
        """Advance ``cycles`` quiet global cycles (no commits, no resolutions)."""
        if self.barriers and self.barriers[0].stamp == self.local:
            self.offset += cycles
        else:
            self.local += cycles
