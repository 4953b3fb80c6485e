import csv
import json

import pytest

from dhisq.cli import EXIT, main
from dhisq.sim import parse_telf

CIRCUIT = "qubit q0, q1, q2; bit c; h q0; cx q0, q1; measure q1 -> c; if (c) x q2; h q2;\n"


def test_assemble_disassemble(tmp_path, capsys):
    src = tmp_path / "p.s"
    src.write_text("waiti 57\ncw.i.i 1, 1\n")
    assert main(["assemble", str(src)]) == 0
    words = capsys.readouterr().out.split()
    assert len(words) == 2 and all(len(w) == 8 for w in words)
    assert main(["assemble", str(src), "-o", str(tmp_path / "p.bin")]) == 0
    assert main(["disassemble", str(tmp_path / "p.bin")]) == 0
    assert capsys.readouterr().out.split("\n")[:2] == ["    waiti 57", "    cw.i.i 1, 1"]


def test_compile_then_run(tmp_path, capsys):
    (tmp_path / "c.qc").write_text(CIRCUIT)
    build = tmp_path / "build"
    assert main(["compile", str(tmp_path / "c.qc"), "-o", str(build)]) == 0
    manifest = json.loads((build / "manifest.json").read_text())
    assert manifest["mode"] == "bisp" and (build / "topology.json").exists()
    telf = tmp_path / "run.telf"
    assert main(["run", str(build), "--seed", "1", "--telf", str(telf),
                 "--report", str(tmp_path / "r.json")]) == 0
    labels = [r.label for r in parse_telf(telf)]
    assert labels[:3] == ["h q0", "cx q0,q1", "cx q0,q1"]
    assert json.loads((tmp_path / "r.json").read_text())["mode"] == "bisp"


def test_run_explicit_programs(tmp_path, capsys):
    (tmp_path / "a.s").write_text("waiti 10\ncw.i.i 0, 1\n")
    build = tmp_path / "b"
    (tmp_path / "c.qc").write_text("qubit q0; h q0;\n")
    main(["compile", str(tmp_path / "c.qc"), "-o", str(build)])
    capsys.readouterr()
    assert main(["run", "-p", f"0={tmp_path / 'a.s'}", "-t", str(build / "topology.json")]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert rows[-1].startswith("10,40,0,0,1")


def test_fig10_command(tmp_path, capsys):
    assert main(["fig10", "--outer", "1"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["marked_events_aligned"] and set(out["steps_ns"]) == {120}


def test_bench_command(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"families": ["ghz"], "qubits": 6, "grid_us": [30, 300]}))
    out = tmp_path / "rows.csv"
    assert main(["bench", "--spec", str(spec), "--shots", "1", "-o", str(out)]) == 0
    assert len(list(csv.reader(out.open()))) == 3
    assert "mean runtime reduction" in capsys.readouterr().err


@pytest.mark.parametrize("argv, code, tag", [
    (["assemble", "{dir}/bad.s"], EXIT["input"], "input"),
    (["assemble", "{dir}/missing.s"], EXIT["io"], "io"),
    (["compile", "{dir}/far.qc", "-o", "{dir}/o"], EXIT["input"], "input"),
    (["run", "-p", "0={dir}/loop.s", "-t", "{dir}/t.json", "--cycle-cap", "100"], EXIT["simulation"], "simulation"),
    (["run"], EXIT["input"], "input"),
])
def test_error_exit_codes(tmp_path, capsys, argv, code, tag):
    (tmp_path / "bad.s").write_text("frob r1\n")
    (tmp_path / "far.qc").write_text("qubit a, b, c; cx a, c;\n")
    (tmp_path / "loop.s").write_text("top:\njal r0, top\n")
    (tmp_path / "t.json").write_text(json.dumps({"controllers": [{"id": 0}], "routers": [256],
                                                 "tree": [{"child": 0, "parent": 256, "up": 4}]}))
    assert main([a.format(dir=tmp_path) for a in argv]) == code
    assert capsys.readouterr().err.startswith(f"error[{tag}]")


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
