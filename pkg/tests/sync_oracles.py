"""Independent timing oracles for nearby and remote synchronization.

The remote oracle walks the tree hop by hop and then searches upward for
the first cycle at which every participant may legally resume.
"""
from __future__ import annotations


def nearby_resume(b_a: int, b_b: int, n: int) -> int:
    return max(b_a, b_b) + n


def request_arrival(topo, router: int, booking: dict[int, int], members) -> int:
    """Cycle the last request of ``router``'s group reaches ``router``."""

    def reach(node: int) -> int:
        # cycle the (aggregated) request from ``node`` leaves it
        if node in topo.controllers:
            return booking[node]
        kids = [c for c in topo.children(node) if set(topo.leaves_under(c)) & set(members)]
        return max(reach(c) + topo.up[c] for c in kids) + topo.router_delay

    kids = [c for c in topo.children(router) if set(topo.leaves_under(c)) & set(members)]
    return max(reach(c) + topo.up[c] for c in kids)


def grant_arrivals(topo, router: int, decided: int, members) -> dict[int, int]:
    out = {}

    def down(node: int, t: int):
        for c in topo.children(node):
            if not set(topo.leaves_under(c)) & set(members):
                continue
            arr = t + topo.down[c]
            if c in topo.controllers:
                out[c] = arr
            else:
                down(c, arr + topo.router_delay)

    down(router, decided + topo.router_delay)
    return out


def remote_resume(topo, router: int, booking: dict[int, int], proposed: dict[int, int]) -> int:
    members = sorted(booking)
    decided = request_arrival(topo, router, booking, members)
    grants = grant_arrivals(topo, router, decided, members)
    t = 0
    while True:
        if all(t >= proposed[m] and t >= grants[m] for m in members):
            return t
        t += 1
