"""Communication substrate: mesh links, router tree, message delivery.

Controllers are leaves of a balanced router tree and additionally share
mesh edges with their physical neighbours. Routers aggregate region sync
requests (max-reduce up the tree, broadcast the grant down).
"""
from __future__ import annotations

import heapq
import itertools
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from .isa import CENTRAL_ADDR, ROUTER_BASE


class TopologyError(ValueError):
    pass


class RoutingError(RuntimeError):
    pass


@dataclass
class NodeSpec:
    id: int
    ports: int = 8
    queue_depth: int = 1024
    capture: dict[int, int] = field(default_factory=dict)  # readout port -> result latency (cycles)
    trigger_delay: int = 0   # output latency between commit and the physical port
    pipeline_ratio: int = 1  # TCU cycles per classical instruction
    recv_lead: int = 4       # cycles reserved after a recv before the next timed event

    def to_dict(self) -> dict:
        return {"id": self.id, "ports": self.ports, "queue_depth": self.queue_depth,
                "capture": {str(k): v for k, v in self.capture.items()},
                "trigger_delay": self.trigger_delay, "pipeline_ratio": self.pipeline_ratio,
                "recv_lead": self.recv_lead}

    @classmethod
    def from_dict(cls, d: dict) -> "NodeSpec":
        d = dict(d)
        d["capture"] = {int(k): int(v) for k, v in d.get("capture", {}).items()}
        return cls(**d)


@dataclass
class Topology:
    controllers: dict[int, NodeSpec]
    routers: list[int] = field(default_factory=list)
    parent: dict[int, int] = field(default_factory=dict)
    up: dict[int, int] = field(default_factory=dict)      # child -> latency child->parent
    down: dict[int, int] = field(default_factory=dict)    # child -> latency parent->child
    mesh: dict[frozenset, int] = field(default_factory=dict)
    router_delay: int = 1
    star_latency: int = 32

    def __post_init__(self):
        self._children: dict[int, list[int]] = {r: [] for r in self.routers}
        for c, p in sorted(self.parent.items()):
            self._children.setdefault(p, []).append(c)
        self._leaves: dict[int, frozenset] = {}

    # ------------------------------------------------------------ queries
    @property
    def root(self) -> int | None:
        roots = [r for r in self.routers if r not in self.parent]
        return roots[0] if len(roots) == 1 else None

    def children(self, router: int) -> list[int]:
        return self._children.get(router, [])

    def leaves_under(self, node: int) -> frozenset:
        if node in self.controllers:
            return frozenset([node])
        if node not in self._leaves:
            self._leaves[node] = frozenset().union(*(self.leaves_under(c) for c in self.children(node))) \
                if self.children(node) else frozenset()
        return self._leaves[node]

    def ancestors(self, node: int) -> list[int]:
        out = []
        while node in self.parent:
            node = self.parent[node]
            out.append(node)
        return out

    def depth(self, node: int) -> int:
        return len(self.ancestors(node))

    @property
    def height(self) -> int:
        return max((self.depth(c) for c in self.controllers), default=0)

    def neighbors(self, c: int) -> list[int]:
        return sorted(next(iter(e - {c})) for e in self.mesh if c in e)

    def mesh_latency(self, a: int, b: int) -> int | None:
        return self.mesh.get(frozenset((a, b)))

    def lca(self, nodes) -> int:
        nodes = list(nodes)
        common = None
        for n in nodes:
            anc = self.ancestors(n)
            common = anc if common is None else [a for a in common if a in anc]
        if not common:
            raise RoutingError(f"no common ancestor router for {sorted(nodes)}")
        return common[0]

    def up_latency(self, leaf: int, router: int) -> int:
        """Cycles for a request leaving ``leaf`` to reach ``router``.

        Includes the processing delay of every intermediate router.
        """
        if router not in self.ancestors(leaf):
            raise RoutingError(f"router {router} is not an ancestor of {leaf}")
        total, node = 0, leaf
        while node != router:
            total += self.up[node]
            node = self.parent[node]
            if node != router:
                total += self.router_delay
        return total

    def down_latency(self, router: int, leaf: int) -> int:
        """Cycles from ``router`` emitting a grant to its arrival at ``leaf``."""
        if router not in self.ancestors(leaf):
            raise RoutingError(f"router {router} is not an ancestor of {leaf}")
        total, node = 0, leaf
        while node != router:
            total += self.down[node]
            node = self.parent[node]
            if node != router:
                total += self.router_delay
        return total

    def datum_latency(self, src: int, dst: int) -> int:
        """Classical-datum transit: direct mesh edge when adjacent, else through the tree."""
        if src == dst:
            return 0
        if dst == CENTRAL_ADDR:
            return self.star_latency
        direct = self.mesh_latency(src, dst)
        if direct is not None:
            return direct
        if dst not in self.controllers:
            raise RoutingError(f"unroutable datum target {dst}")
        r = self.lca([src, dst])
        return self.up_latency(src, r) + self.router_delay + self.down_latency(r, dst)

    def sync_participants(self, router: int, explicit: dict[int, frozenset] | None = None) -> frozenset:
        if explicit and router in explicit:
            return frozenset(explicit[router])
        return self.leaves_under(router)

    # --------------------------------------------------------- validation
    def validate(self, require_balanced: bool = True) -> None:
        for c in self.controllers:
            if not 0 <= c < CENTRAL_ADDR:
                raise TopologyError(f"controller id {c} outside [0, {CENTRAL_ADDR})")
        for r in self.routers:
            if r < ROUTER_BASE:
                raise TopologyError(f"router id {r} must be >= {ROUTER_BASE}")
        known = set(self.controllers) | set(self.routers)
        for c, p in self.parent.items():
            if c not in known or p not in self.routers:
                raise TopologyError(f"tree edge {c}->{p} references unknown node or non-router parent")
            if self.up.get(c, -1) < 1 or self.down.get(c, -1) < 0:
                raise TopologyError(f"tree edge {c}->{p}: uplink must be >= 1, downlink >= 0")
        for e, lat in self.mesh.items():
            if len(e) != 2:
                raise TopologyError("zero-latency self-loop / degenerate mesh edge")
            if not e <= set(self.controllers):
                raise TopologyError(f"mesh edge {sorted(e)} must join two controllers")
            if lat < 1:
                raise TopologyError(f"mesh edge {sorted(e)} latency must be >= 1")
        if self.router_delay < 0 or self.star_latency < 1:
            raise TopologyError("router_delay must be >= 0 and star_latency >= 1")
        if not self.routers:
            return
        if self.root is None:
            raise TopologyError("router tree must have exactly one root")
        for n in known:
            seen = set()
            while n in self.parent:
                if n in seen:
                    raise TopologyError("cycle in router tree")
                seen.add(n)
                n = self.parent[n]
        for c in self.controllers:
            if self.children(c):
                raise TopologyError(f"controller {c} cannot have children")
            if c not in self.parent:
                raise TopologyError(f"controller {c} is not attached to the tree")
        for r in self.routers:
            if not self.children(r):
                raise TopologyError(f"router {r} has no children")
        if require_balanced and len({self.depth(c) for c in self.controllers}) > 1:
            raise TopologyError("router tree is not balanced: leaf depths differ")

    # ----------------------------------------------------------- builders
    @classmethod
    def balanced(cls, n: int, arity: int = 4, *, mesh_edges=None, mesh_latency: int = 4,
                 up: int = 4, down: int = 4, router_delay: int = 1, star_latency: int = 32,
                 node: dict | None = None) -> "Topology":
        """``n`` controllers under a minimal-height balanced tree of ``arity``-way routers.

        ``mesh_edges`` defaults to a line 0-1-2-...; ``node`` holds NodeSpec
        keyword overrides applied to every controller.
        """
        if n < 1 or arity < 2:
            raise TopologyError("need n >= 1 and arity >= 2")
        controllers = {i: NodeSpec(i, **(node or {})) for i in range(n)}
        height = 1
        while arity ** height < n:
            height += 1
        rid = itertools.count(ROUTER_BASE)
        routers, parent = [], {}
        level = list(range(n))
        for _ in range(height):
            groups = [level[i:i + arity] for i in range(0, len(level), arity)]
            nxt = []
            for g in groups:
                r = next(rid)
                routers.append(r)
                for c in g:
                    parent[c] = r
                nxt.append(r)
            level = nxt
        if mesh_edges is None:
            mesh_edges = [(i, i + 1) for i in range(n - 1)]
        mesh = {frozenset(e): mesh_latency for e in mesh_edges}
        ups = {c: up for c in parent}
        downs = {c: down for c in parent}
        return cls(controllers, routers, parent, ups, downs, mesh, router_delay, star_latency)

    # ------------------------------------------------------------ file IO
    def to_dict(self) -> dict:
        return {
            "controllers": [s.to_dict() for _, s in sorted(self.controllers.items())],
            "routers": sorted(self.routers),
            "tree": [{"child": c, "parent": p, "up": self.up[c], "down": self.down[c]}
                     for c, p in sorted(self.parent.items())],
            "mesh": [{"a": min(e), "b": max(e), "latency": lat}
                     for e, lat in sorted(self.mesh.items(), key=lambda kv: sorted(kv[0]))],
            "router_delay": self.router_delay,
            "star_latency": self.star_latency,
        }

    @classmethod
    def from_dict(cls, d: dict, require_balanced: bool = True) -> "Topology":
        controllers = {}
        for nd in d.get("controllers", []):
            spec = NodeSpec.from_dict(nd)
            if spec.id in controllers:
                raise TopologyError(f"duplicate controller {spec.id}")
            controllers[spec.id] = spec
        parent, up, down = {}, {}, {}
        for e in d.get("tree", []):
            c = int(e["child"])
            if c in parent:
                raise TopologyError(f"node {c} has two parents")
            parent[c], up[c], down[c] = int(e["parent"]), int(e["up"]), int(e.get("down", e["up"]))
        mesh: dict[frozenset, int] = {}
        for e in d.get("mesh", []):
            a, b, lat = int(e["a"]), int(e["b"]), int(e["latency"])
            if "latency_ba" in e and int(e["latency_ba"]) != lat:
                raise TopologyError(f"asymmetric nearby-link latency on {a}-{b}")
            key = frozenset((a, b))
            if key in mesh and mesh[key] != lat:
                raise TopologyError(f"asymmetric nearby-link latency on {a}-{b}")
            mesh[key] = lat
        topo = cls(controllers, [int(r) for r in d.get("routers", [])], parent, up, down, mesh,
                   int(d.get("router_delay", 1)), int(d.get("star_latency", 32)))
        topo.validate(require_balanced)
        return topo

    @classmethod
    def load(cls, path) -> "Topology":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


# ------------------------------------------------------------ messages

@dataclass(frozen=True)
class Message:
    kind: str          # 'pulse' | 'request' | 'grant' | 'datum'
    src: int
    dst: int
    send: int
    arrival: int
    value: int = 0     # T_i for requests, T_m for grants, word for data
    group: int = -1    # destination router of a sync request/grant
    origin: int = -1   # original producer of a datum (survives the star rebroadcast)

    def __post_init__(self):
        if self.arrival < self.send:
            raise ValueError("message arrives before it is sent")


class Network:
    """In-flight messages keyed by arrival cycle."""

    def __init__(self):
        self._heap: list = []
        self._seq = itertools.count()
        self.sent = 0
        self.delivered = 0

    def post(self, msg: Message) -> None:
        heapq.heappush(self._heap, (msg.arrival, msg.src, msg.send, next(self._seq), msg))
        self.sent += 1

    def deliver(self, now: int) -> list[Message]:
        """Pop every message arriving at ``now``, ties in (source, send-cycle) order."""
        out = []
        while self._heap and self._heap[0][0] <= now:
            arrival, *_, msg = heapq.heappop(self._heap)
            assert arrival == now, f"message {msg} missed its arrival cycle"
            out.append(msg)
        self.delivered += len(out)
        return out

    def next_arrival(self) -> int | None:
        return self._heap[0][0] if self._heap else None

    def __len__(self) -> int:
        return len(self._heap)


def clamp_grant(t_m: int, now: int, downlinks) -> int:
    """Push the granted point late enough that every participant hears it in time."""
    return max(t_m, now + max(downlinks, default=0))


class Router:
    """Region-sync aggregation at one tree router."""

    def __init__(self, rid: int, topo: Topology, participants: dict[int, frozenset] | None = None):
        self.id = rid
        self.topo = topo
        self.parent = topo.parent.get(rid)
        self.children = topo.children(rid)
        self._participants = participants or {}
        self.buffers: dict[int, dict[int, deque]] = {}
        self.decisions: list[tuple[int, int, int]] = []  # (group, decision cycle, granted T)

    def required_children(self, group: int) -> list[int]:
        members = self.topo.sync_participants(group, self._participants)
        return [c for c in self.children if self.topo.leaves_under(c) & members]

    def route_step(self, msg: Message, now: int) -> list[Message]:
        delay = self.topo.router_delay
        if msg.kind == "request":
            if msg.src not in self.children:
                raise RoutingError(f"router {self.id}: request from non-child {msg.src}")
            need = self.required_children(msg.group)
            if msg.src not in need:
                raise RoutingError(f"router {self.id}: {msg.src} is not a participant of group {msg.group}")
            buf = self.buffers.setdefault(msg.group, {})
            buf.setdefault(msg.src, deque()).append(msg.value)
            if not all(buf.get(c) for c in need):
                return []
            t_max = max(buf[c].popleft() for c in need)
            if msg.group == self.id:
                members = self.topo.sync_participants(self.id, self._participants)
                downs = [delay + self.topo.down_latency(self.id, p) for p in members]
                t_grant = clamp_grant(t_max, now, downs)
                self.decisions.append((self.id, now, t_grant))
                return self._broadcast(msg.group, t_grant, now + delay)
            if self.parent is None:
                raise RoutingError(f"sync group {msg.group} not reachable above router {self.id}")
            send = now + delay
            return [Message("request", self.id, self.parent, send, send + self.topo.up[self.id],
                            t_max, msg.group)]
        if msg.kind == "grant":
            if msg.src != self.parent:
                raise RoutingError(f"router {self.id}: grant from non-parent {msg.src}")
            return self._broadcast(msg.group, msg.value, now + delay)
        raise RoutingError(f"router {self.id}: unexpected {msg.kind} message")

    def _broadcast(self, group: int, value: int, send: int) -> list[Message]:
        return [Message("grant", self.id, c, send, send + self.topo.down[c], value, group)
                for c in self.required_children(group)]

    def pending(self) -> bool:
        return any(q for buf in self.buffers.values() for q in buf.values())
