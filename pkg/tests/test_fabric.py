import json

import pytest
from hypothesis import given, strategies as st

from dhisq.fabric import (Message, Network, NodeSpec, Router, RoutingError, Topology, TopologyError,
                          clamp_grant)


def test_pulse_arrives_after_link_latency():
    net = Network()
    net.post(Message("pulse", 0, 1, 100, 112))
    assert net.deliver(111) == []
    assert [m.arrival for m in net.deliver(112)] == [112]
    assert net.sent == net.delivered == 1


def test_ties_delivered_by_source_then_send():
    net = Network()
    for src, send in [(3, 5), (1, 7), (1, 2)]:
        net.post(Message("datum", src, 9, send, 10))
    assert [(m.src, m.send) for m in net.deliver(10)] == [(1, 2), (1, 7), (3, 5)]


def test_message_cannot_arrive_before_send():
    with pytest.raises(ValueError):
        Message("pulse", 0, 1, 10, 9)


def test_self_loop_rejected():
    topo = Topology.balanced(2)
    topo.mesh[frozenset({0})] = 0
    with pytest.raises(TopologyError, match="self-loop"):
        topo.validate()


def two_level(up_leaf=3, up_mid=4, router_delay=0) -> Topology:
    # 4 leaves, two mid routers, one root
    topo = Topology.balanced(4, arity=2, up=up_leaf, down=up_leaf, router_delay=router_delay)
    for r in topo.routers:
        if r in topo.parent:
            topo.up[r] = topo.down[r] = up_mid
    return topo


def test_multi_hop_path_sum():
    topo = two_level()
    assert topo.height == 2
    assert topo.up_latency(0, topo.root) == 7


def test_router_takes_max_of_children():
    topo = Topology.balanced(3, up=1, down=1)
    (rid,) = topo.routers
    router = Router(rid, topo)
    out = []
    for c, t in zip(range(3), (50, 60, 70)):
        out = router.route_step(Message("request", c, rid, 0, 1, t, rid), now=1)
    assert {m.value for m in out} == {70}
    assert sorted(m.dst for m in out) == [0, 1, 2]


def test_grant_from_parent_rebroadcast_unchanged():
    topo = two_level()
    mid = topo.parent[0]
    router = Router(mid, topo)
    out = router.route_step(Message("grant", topo.root, mid, 10, 14, 321, topo.root), now=14)
    assert [(m.dst, m.value) for m in out] == [(0, 321), (1, 321)]


def test_staggered_requests_decide_on_last_arrival():
    topo = two_level(router_delay=1)
    root = topo.root
    routers = {r: Router(r, topo) for r in topo.routers}
    # leaf bookings; requests climb leaf -> mid -> root
    bookings = {0: 0, 1: 5, 2: 2, 3: 30}
    at_root = []
    for leaf, b in bookings.items():
        mid = topo.parent[leaf]
        msg = Message("request", leaf, mid, b, b + topo.up[leaf], 1000, root)
        for m in routers[mid].route_step(msg, msg.arrival):
            at_root.append(m)
    decisions = []
    for m in sorted(at_root, key=lambda m: m.arrival):
        if routers[root].route_step(m, m.arrival):
            decisions.append(m.arrival)
    mids = [max(bookings[a], bookings[b]) + 3 + 1 + 4 for a, b in ((0, 1), (2, 3))]
    assert decisions == [max(mids)]


def test_request_from_stranger_rejected():
    topo = two_level()
    router = Router(topo.root, topo)
    with pytest.raises(RoutingError, match="non-child"):
        router.route_step(Message("request", 0, topo.root, 0, 1, 5, topo.root), 1)


def test_grant_from_non_parent_rejected():
    topo = two_level()
    mid = topo.parent[0]
    with pytest.raises(RoutingError, match="non-parent"):
        Router(mid, topo).route_step(Message("grant", 0, mid, 0, 1, 5, topo.root), 1)


def test_clamp_inactive_when_grant_is_far():
    assert clamp_grant(500, 100, [3, 9]) == 500


def test_clamp_active_when_grant_is_past():
    assert clamp_grant(100, 100, [3, 9]) == 109


@given(st.integers(0, 10 ** 6), st.integers(0, 10 ** 6), st.lists(st.integers(0, 100), max_size=8))
def test_clamp_reaches_everyone(t_m, now, downs):
    g = clamp_grant(t_m, now, downs)
    assert g >= t_m
    assert all(now + d <= g for d in downs)


def test_datum_routes_through_tree_when_not_adjacent():
    topo = Topology.balanced(4, mesh_edges=[(0, 1)], mesh_latency=5, up=4, down=4, router_delay=1)
    assert topo.datum_latency(0, 1) == 5
    assert topo.datum_latency(0, 3) == 4 + 1 + 4


def test_json_round_trip(tmp_path):
    topo = Topology.balanced(5, node={"capture": {1: 75}, "trigger_delay": 3})
    topo.dump(tmp_path / "t.json")
    again = Topology.load(tmp_path / "t.json")
    assert again.to_dict() == topo.to_dict()
    assert again.controllers[2] == NodeSpec(2, capture={1: 75}, trigger_delay=3)


def test_asymmetric_nearby_link_rejected():
    d = Topology.balanced(2).to_dict()
    d["mesh"][0]["latency_ba"] = d["mesh"][0]["latency"] + 1
    with pytest.raises(TopologyError, match="asymmetric"):
        Topology.from_dict(json.loads(json.dumps(d)))


def test_unbalanced_tree_rejected():
    d = two_level().to_dict()
    # hang leaf 3 straight off the root
    for e in d["tree"]:
        if e["child"] == 3:
            e["parent"] = max(d["routers"])
    with pytest.raises(TopologyError, match="balanced"):
        Topology.from_dict(d)
    Topology.from_dict(d, require_balanced=False)


def test_diameter_bound():
    topo = Topology.balanced(16, arity=2)
    assert max(topo.depth(c) for c in topo.controllers) == topo.height == 4
