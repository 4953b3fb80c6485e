#!/usr/bin/env python3
"""Two-board sync experiment: per-iteration sync start and marked-event alignment."""
import argparse

from dhisq.bench import fig10_report, gen_fig10
from dhisq.sim import emit_telf


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--inner", type=int, default=8)
    ap.add_argument("--outer", type=int, default=2)
    ap.add_argument("--increment", type=int, default=30, help="waitr growth per iteration, cycles")
    ap.add_argument("--telf", help="also write the trace here")
    a = ap.parse_args()

    fig = gen_fig10(a.inner, a.outer, a.increment)
    rep = fig10_report(fig)
    print("iter  sync-start lag (ns)  yellow cycles (ctrl, readout)")
    for i, (lag, pair) in enumerate(zip(rep["lag_ns"], rep["pairs"]["yellow"])):
        print(f"{i:4d}  {'-' if lag is None else lag:>19}  {pair}")
    print("steps (ns):", sorted(set(rep["steps_ns"])))
    aligned = all(x == y for pairs in rep["pairs"].values() for x, y in pairs)
    print("marked events aligned:", aligned)
    if a.telf:
        emit_telf(rep["traces"], a.telf)


if __name__ == "__main__":
    main()
