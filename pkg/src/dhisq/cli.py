"""Command-line entry point: ``dhisq <command> ...``.

Errors print ``error[<category>]: <message>`` on stderr and exit with the
category's code (see ``EXIT``).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bench import BenchmarkSpec, fig10_report, gen_fig10, line_topology, mean_reduction, run_comparison, write_csv
from .dqcc import CodegenError, IRError, MappingConfig, MappingError, ScheduleError, compile_circuit, parse_ir
from .fabric import RoutingError, Topology, TopologyError
from .isa import AsmError, EncodingError, Program, assemble, decode, disassemble, encode
from .node import NodeFault
from .sim import FixedOutcomes, RandomOutcomes, SimConfig, SimulationError, emit_telf, run, run_lockstep

EXIT = {"internal": 1, "input": 3, "compile": 4, "simulation": 5, "io": 6}

# compile errors subclass ValueError, so order matters
_CATEGORY = [
    ((ScheduleError, CodegenError), "compile"),
    ((SimulationError, NodeFault, RoutingError), "simulation"),
    ((AsmError, EncodingError, IRError, MappingError, TopologyError, ValueError, KeyError), "input"),
    ((OSError,), "io"),
]


class CliError(Exception):
    def __init__(self, category: str, msg: str):
        super().__init__(msg)
        self.category = category


def _category(exc: Exception) -> str:
    if isinstance(exc, CliError):
        return exc.category
    for types, cat in _CATEGORY:
        if isinstance(exc, types):
            return cat
    return "internal"


def _load_program(path: Path, controller: int) -> Program:
    data = path.read_bytes()
    if path.suffix == ".bin":
        return decode(data, controller=controller)
    return assemble(data.decode(), controller=controller)


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


# ------------------------------------------------------------- commands

def cmd_assemble(a) -> None:
    prog = assemble(Path(a.source).read_text(), controller=a.controller)
    blob = encode(prog)
    if a.output:
        Path(a.output).write_bytes(blob)
    else:
        for i in range(0, len(blob), 4):
            sys.stdout.write(blob[i:i + 4][::-1].hex() + "\n")


def cmd_disassemble(a) -> None:
    prog = decode(Path(a.binary).read_bytes(), controller=a.controller)
    _write(disassemble(prog), a.output)


def _programs(a) -> tuple[dict[int, Program], dict]:
    manifest = {}
    progs: dict[int, Program] = {}
    if a.build:
        root = Path(a.build)
        manifest = json.loads((root / "manifest.json").read_text())
        for cid, name in manifest["controllers"].items():
            progs[int(cid)] = _load_program(root / name, int(cid))
    for spec in a.program or []:
        cid, _, path = spec.partition("=")
        if not path or not cid.isdigit():
            raise CliError("input", f"--program expects ID=PATH, got {spec!r}")
        progs[int(cid)] = _load_program(Path(path), int(cid))
    if not progs:
        raise CliError("input", "no programs given (use a build directory or --program ID=PATH)")
    return progs, manifest


def cmd_run(a) -> None:
    progs, manifest = _programs(a)
    topo_path = a.topology or (Path(a.build) / "topology.json" if a.build else None)
    if topo_path is None or not Path(topo_path).exists():
        raise CliError("input", "a topology file is required")
    topo = Topology.load(topo_path)
    mode = a.mode or manifest.get("mode", "bisp")
    outcomes = FixedOutcomes() if a.zeros else RandomOutcomes(a.seed)
    cfg = SimConfig(topo, progs, cycle_ns=a.cycle_ns, outcomes=outcomes, mode=mode,
                    shots=a.shots or manifest.get("shots", 1), cycle_cap=a.cycle_cap)
    traces, report = (run if mode == "bisp" else run_lockstep)(cfg)
    if a.telf == "-":
        emit_telf(traces, sys.stdout, a.cycle_ns, cfg.digest())
    else:
        emit_telf(traces, a.telf, a.cycle_ns, cfg.digest())
    if a.report:
        report.dump(a.report)
    print(f"{len(traces)} events, mean runtime {report.runtime_ns:.0f} ns, late issues {report.late_issues}",
          file=sys.stderr)


def cmd_compile(a) -> None:
    ir = parse_ir(Path(a.circuit).read_text())
    topo = Topology.load(a.topology) if a.topology else line_topology(len(ir.qubits))
    mapping = MappingConfig.load(a.mapping) if a.mapping else None
    comp = compile_circuit(ir, topo, mapping, a.mode, cycle_ns=a.cycle_ns)
    manifest = comp.write(a.outdir)
    topo.dump(Path(a.outdir) / "topology.json")
    for d in comp.schedule.diagnostics:
        print(f"note: {d}", file=sys.stderr)
    print(manifest)


def cmd_bench(a) -> None:
    spec = BenchmarkSpec.from_dict(json.loads(Path(a.spec).read_text())) if a.spec else BenchmarkSpec()
    for key in ("kind", "seed", "shots", "chain"):
        val = getattr(a, key)
        if val is not None:
            setattr(spec, key, val)
    rows = run_comparison(spec)
    text = write_csv(rows, None)
    _write(text, a.output)
    print(f"mean runtime reduction {mean_reduction(rows):.2f}%", file=sys.stderr)


def cmd_fig10(a) -> None:
    fig = gen_fig10(inner=a.inner, outer=a.outer, increment=a.increment)
    rep = fig10_report(fig, a.cycle_ns)
    if a.telf:
        emit_telf(rep["traces"], a.telf, a.cycle_ns)
    aligned = all(x == y for pairs in rep["pairs"].values() for x, y in pairs)
    out = {"lag_ns": rep["lag_ns"], "steps_ns": rep["steps_ns"], "marked_events_aligned": aligned}
    _write(json.dumps(out, indent=2) + "\n", a.output)


# --------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dhisq", description="Distributed HISQ toolchain and simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("assemble", help="assemble HISQ text into a binary image")
    s.add_argument("source")
    s.add_argument("-o", "--output", help="binary output (default: hex words on stdout)")
    s.add_argument("--controller", type=int)
    s.set_defaults(func=cmd_assemble)

    s = sub.add_parser("disassemble", help="turn a binary image back into assembly")
    s.add_argument("binary")
    s.add_argument("-o", "--output")
    s.add_argument("--controller", type=int)
    s.set_defaults(func=cmd_disassemble)

    s = sub.add_parser("run", help="simulate programs and write a TELF trace")
    s.add_argument("build", nargs="?", help="directory written by 'dhisq compile'")
    s.add_argument("-p", "--program", action="append", metavar="ID=PATH")
    s.add_argument("-t", "--topology")
    s.add_argument("--mode", choices=("bisp", "lockstep"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--zeros", action="store_true", help="every measurement reads 0")
    s.add_argument("--shots", type=int)
    s.add_argument("--cycle-ns", type=int, default=4)
    s.add_argument("--cycle-cap", type=int, default=10 ** 7)
    s.add_argument("--telf", default="-", help="TELF output path (default stdout)")
    s.add_argument("--report", help="write the run report as JSON")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("compile", help="compile a circuit to per-controller assembly")
    s.add_argument("circuit")
    s.add_argument("-t", "--topology", help="default: a line of one controller per qubit")
    s.add_argument("-m", "--mapping")
    s.add_argument("--mode", choices=("bisp", "lockstep"), default="bisp")
    s.add_argument("--cycle-ns", type=int, default=4)
    s.add_argument("-o", "--outdir", default="build")
    s.set_defaults(func=cmd_compile)

    s = sub.add_parser("bench", help="BISP vs lock-step comparison to CSV")
    s.add_argument("--spec", help="JSON BenchmarkSpec")
    s.add_argument("--kind", choices=("suite", "long-range-cnot", "dynamic-converted"))
    s.add_argument("--seed", type=int)
    s.add_argument("--shots", type=int)
    s.add_argument("--chain", type=int)
    s.add_argument("-o", "--output", help="CSV path (default stdout)")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("fig10", help="run the two-board sync experiment")
    s.add_argument("--inner", type=int, default=8)
    s.add_argument("--outer", type=int, default=2)
    s.add_argument("--increment", type=int, default=30)
    s.add_argument("--cycle-ns", type=int, default=4)
    s.add_argument("--telf")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_fig10)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001
        cat = _category(exc)
        print(f"error[{cat}]: {exc}", file=sys.stderr)
        return EXIT[cat]
    return 0


if __name__ == "__main__":
    sys.exit(main())
