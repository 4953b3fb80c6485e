import csv
import io

import pytest

from dhisq import SimConfig, run
from dhisq.bench import (DEFAULT_GRID_US, FAMILIES, BenchmarkSpec, ComparisonRow, convert_to_dynamic,
                         fig10_report, gen_fig10, gen_long_range_cnot, line_topology, long_range_cnot,
                         mean_reduction, run_comparison, write_csv)
from dhisq.dqcc import CircuitIR, Gate, compile_circuit


@pytest.mark.parametrize("inc, step", [(30, 120), (0, 0), (7, 28), (1, 4)])
def test_fig10_sync_start_advances_by_increment(inc, step):
    rep = fig10_report(gen_fig10(increment=inc))
    assert rep["lag_ns"][0] is None
    assert set(rep["steps_ns"]) == {step}


def test_fig10_rejects_bad_loops():
    with pytest.raises(ValueError):
        gen_fig10(inner=0)


def test_long_range_cnot_needs_three_qubits():
    with pytest.raises(ValueError, match="at least 3"):
        gen_long_range_cnot(2)


def test_smallest_long_range_cnot_runs():
    ir = gen_long_range_cnot(3)
    assert len(ir.bits) == 1
    topo = line_topology(3)
    traces, rep = run(SimConfig(topo, compile_circuit(ir, topo).programs))
    assert rep.late_issues == 0 and traces


def _static(n, pairs):
    ir = CircuitIR([f"d{i}" for i in range(n)], [], [Gate("cx", (f"d{a}", f"d{b}")) for a, b in pairs])
    ir.validate()
    return ir


def test_adjacent_only_is_unchanged():
    ir = _static(4, [(0, 1), (2, 1), (3, 2)])
    dyn = convert_to_dynamic(ir, seed=5, p=1.0)
    assert dyn.ir.body == ir.body and dyn.ir.qubits == ir.qubits
    assert dyn.substituted == dyn.routed == 0


def test_substitution_splices_the_template():
    dyn = convert_to_dynamic(_static(4, [(0, 3)]), p=1.0)
    anc = [q for q in dyn.ir.qubits if q.startswith("anc")]
    assert len(anc) == 2 and dyn.substituted == 1
    assert dyn.ir.body == long_range_cnot(["d0", *anc, "d3"], dyn.ir.bits)
    # each ancilla lives on the controller of the data qubit it stands in for
    assert [dyn.mapping.controller(a) for a in anc] == [1, 2]


def test_unsubstituted_pairs_are_swap_routed():
    dyn = convert_to_dynamic(_static(4, [(0, 3)]), p=0.0)
    assert [g.name for g in dyn.ir.body] == ["swap", "swap", "cx", "swap", "swap"]


def test_conversion_is_seeded():
    a = convert_to_dynamic(FAMILIES["qft"](8), seed=11)
    b = convert_to_dynamic(FAMILIES["qft"](8), seed=11)
    assert a.ir == b.ir and a.mapping == b.mapping


def test_no_path():
    ir = _static(4, [(0, 3)])
    adj = {"d0": {"d1"}, "d1": {"d0"}, "d2": {"d3"}, "d3": {"d2"}}
    with pytest.raises(ValueError, match="no path"):
        convert_to_dynamic(ir, p=1.0, adjacency=adj)


def test_csv_has_one_row_per_benchmark_and_grid_point(tmp_path):
    spec = BenchmarkSpec(families=("ghz", "bv"), qubits=6, shots=1)
    rows = run_comparison(spec, tmp_path / "out.csv")
    assert len(rows) == 2 * len(DEFAULT_GRID_US)
    with open(tmp_path / "out.csv") as fh:
        table = list(csv.reader(fh))
    assert tuple(table[0]) == ComparisonRow.FIELDS
    assert len(table) == 1 + len(rows)
    assert (tmp_path / "out.csv").read_text() == write_csv(rows, io.StringIO())


def test_without_feedback_modes_tie():
    rows = run_comparison(BenchmarkSpec(families=("ghz", "ising"), qubits=6, p=0.0, shots=1))
    assert mean_reduction(rows) == 0.0
    assert all(r.ratio == pytest.approx(1.0) for r in rows)


def test_long_range_cnot_comparison_favours_bisp():
    rows = run_comparison(BenchmarkSpec(kind="long-range-cnot", shots=2))
    assert all(r.runtime_bisp_ns < r.runtime_lockstep_ns for r in rows)
    assert all(r.ratio > 1 for r in rows)


@pytest.mark.parametrize("kw, needle", [
    (dict(kind="nope"), "kind"),
    (dict(families=("ghz", "shor")), "family"),
    (dict(grid_us=()), "grid"),
    (dict(kind="long-range-cnot", chain=2), "at least 3"),
    (dict(modes=("bisp",)), "both modes"),
])
def test_spec_validation(kw, needle):
    with pytest.raises(ValueError, match=needle):
        run_comparison(BenchmarkSpec(**kw))


def test_spec_from_dict():
    spec = BenchmarkSpec.from_dict({"families": ["ghz"], "grid_us": [30, 300], "durations": {"single": 24}})
    assert spec.families == ("ghz",) and spec.grid_us == (30, 300) and spec.durations.single == 24


def test_fig10_kind_has_no_comparison():
    with pytest.raises(ValueError, match="fig10_report"):
        run_comparison(BenchmarkSpec(kind="fig10-sync"))
