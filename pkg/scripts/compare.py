#!/usr/bin/env python3
"""BISP vs lock-step: per-benchmark runtime reduction and infidelity ratios."""
import argparse

from dhisq.bench import BenchmarkSpec, mean_reduction, run_comparison


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--kind", default="suite", choices=("suite", "long-range-cnot"))
    ap.add_argument("--shots", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--chain", type=int, default=5)
    ap.add_argument("--csv", help="write all rows here")
    a = ap.parse_args()

    spec = BenchmarkSpec(kind=a.kind, shots=a.shots, seed=a.seed, chain=a.chain)
    rows = run_comparison(spec, a.csv)
    by_bench = {}
    for r in rows:
        by_bench.setdefault(r.benchmark, []).append(r)
    print(f"{'benchmark':<12}{'bisp ns':>10}{'lock ns':>10}{'reduction':>11}  ratio range")
    for name, rs in by_bench.items():
        r0 = rs[0]
        ratios = [r.ratio for r in rs]
        print(f"{name:<12}{r0.runtime_bisp_ns:>10.0f}{r0.runtime_lockstep_ns:>10.0f}"
              f"{r0.reduction_pct:>10.1f}%  {min(ratios):.2f}-{max(ratios):.2f}")
    print(f"mean reduction {mean_reduction(rows):.1f}%")


if __name__ == "__main__":
    main()
