import io
import math

import pytest

from dhisq import Durations, FixedOutcomes, SimConfig, Topology, assemble, run, run_lockstep
from dhisq.bench import fig10_report, gen_fig10, line_topology
from dhisq.dqcc import compile_circuit, parse_ir
from dhisq.node import SyncRecord
from dhisq.sim import (DeadlockError, RunReport, SimulationError, emit_telf, estimate_fidelity,
                       parse_telf, sync_overhead)


def test_single_node_single_event():
    traces, rep = run(SimConfig(Topology.balanced(1), {0: assemble("waiti 10\ncw.i.i 0, 1\n")}))
    assert [(r.cycle, r.node, r.port, r.codeword) for r in traces] == [(10, 0, 0, 1)]
    assert rep.runtimes_ns == [40]


def _remote(points, **topo_kw):
    topo = Topology.balanced(len(points), **topo_kw)
    (rid,) = topo.routers
    progs = {i: assemble(f"waiti {t}\nsync {rid}\ncw.i.i 0, 1\n", controller=i) for i, t in enumerate(points)}
    return run(SimConfig(topo, progs))


def test_remote_sync_resumes_at_max():
    traces, rep = _remote([50, 60, 70])
    assert {r.cycle for r in traces} == {70}
    assert rep.overheads[0][0]["overhead"] == 0


def test_single_participant_resumes_at_own_point():
    topo = Topology.balanced(2)
    prog = assemble(f"waiti 33\nsync {topo.root}\ncw.i.i 0, 1\n")
    traces, _ = run(SimConfig(topo, {0: prog}))
    assert [r.cycle for r in traces] == [33]


def test_late_booking_with_zero_downlink():
    # node 1 books at 102 with only D = 2 cycles of margin over an L = 6 uplink
    topo = Topology.balanced(2, up=6, down=0, router_delay=0)
    rid = topo.root
    progs = {
        0: assemble(f"waiti 50\nsync {rid}\ncw.i.i 0, 1\n"),
        1: assemble(f"addi r1, r0, 50\nspin:\naddi r1, r1, -1\nbne r1, r0, spin\n"
                    f"waiti 104\nsync {rid}\ncw.i.i 0, 1\n", controller=1),
    }
    traces, rep = run(SimConfig(topo, progs))
    assert {r.cycle for r in traces} == {108}
    assert rep.overheads[0][0]["overhead"] == 6 - 2


def test_overhead_needs_resumption():
    with pytest.raises(ValueError, match="resumption"):
        sync_overhead([SyncRecord(0, "remote", 256, 1, 4, 10)])


def test_zero_exposure_has_zero_infidelity():
    rep = RunReport("bisp", 4, qubit_windows=[{"q0": (100, 100)}])
    assert estimate_fidelity(rep, 50e-6, 50e-6) == 0.0


def test_one_coherence_time_of_exposure():
    rep = RunReport("bisp", 4, qubit_windows=[{"q0": (0, 30_000)}])
    assert estimate_fidelity(rep, 30e-6, 30e-6) == pytest.approx(1 - math.exp(-1), rel=1e-12)


def test_fidelity_rejects_nonpositive_times():
    with pytest.raises(ValueError):
        estimate_fidelity(RunReport("bisp", 4), 0, 1)


def test_telf_empty_is_header_only():
    buf = io.StringIO()
    emit_telf([], buf)
    lines = buf.getvalue().splitlines()
    assert len(lines) == 2 and lines[0].startswith("#")
    assert parse_telf(buf.getvalue()) == []


def test_telf_round_trip(tmp_path):
    traces = fig10_report(gen_fig10(inner=3, outer=1))["traces"]
    emit_telf(traces, tmp_path / "t.telf")
    assert parse_telf(tmp_path / "t.telf") == traces


def test_telf_shows_the_fig10_progression():
    buf = io.StringIO()
    emit_telf(fig10_report(gen_fig10(outer=1))["traces"], buf)
    rows = [r for r in parse_telf(buf.getvalue()) if r.node == 0 and r.label == "yellow"]
    gaps = [(b.cycle - a.cycle) * 4 for a, b in zip(rows, rows[1:])]
    # spacing is pipeline-bound until the growing waitr dominates the loop
    steps = [b - a for a, b in zip(gaps, gaps[1:])]
    assert all(s >= 0 for s in steps)
    assert steps[-4:] == [120] * 4


def test_deterministic_bytes():
    def once():
        buf = io.StringIO()
        emit_telf(fig10_report(gen_fig10())["traces"], buf)
        return buf.getvalue()
    assert once() == once()


def test_deadlock_is_reported():
    topo = Topology.balanced(2)
    with pytest.raises(DeadlockError, match="node 0"):
        run(SimConfig(topo, {0: assemble("sync 1\ncw.i.i 0, 1\n"), 1: assemble("", controller=1)}))


def test_cycle_cap():
    with pytest.raises(SimulationError, match="cycle cap"):
        run(SimConfig(Topology.balanced(1), {0: assemble("top:\njal r0, top\n")}, cycle_cap=1000))


@pytest.mark.parametrize("kw, needle", [
    (dict(cycle_ns=0), "positive"),
    (dict(durations=Durations(single=22)), "multiple"),
    (dict(mode="star"), "mode"),
])
def test_config_validation(kw, needle):
    with pytest.raises(ValueError, match=needle):
        run(SimConfig(Topology.balanced(1), {0: assemble("")}, **kw))


def test_program_on_unknown_controller():
    with pytest.raises(ValueError, match="unknown controller"):
        run(SimConfig(Topology.balanced(1), {3: assemble("")}))


def test_lockstep_rejects_sync():
    with pytest.raises(SimulationError, match="contains sync"):
        run_lockstep(SimConfig(Topology.balanced(2), {0: assemble("sync 1\n")}))


def _feedback_runtimes(mode):
    ir = parse_ir("qubit q0, q1; bit c; measure q0 -> c; if (c) x q1; h q1;")
    topo = line_topology(2)
    comp = compile_circuit(ir, topo, None, mode)
    out = {}
    for bit in (0, 1):
        cfg = SimConfig(topo, comp.programs, outcomes=FixedOutcomes({(0, 1): [bit]}), mode=mode)
        out[bit] = (run if mode == "bisp" else run_lockstep)(cfg)[1].runtime_ns
    return out


def test_lockstep_reserves_the_region():
    lock, bisp = _feedback_runtimes("lockstep"), _feedback_runtimes("bisp")
    assert lock[0] == lock[1]
    assert bisp[1] - bisp[0] == 20


def test_shots_are_independent():
    topo = Topology.balanced(1)
    traces, rep = run(SimConfig(topo, {0: assemble("waiti 5\ncw.i.i 0, 1\n")}, shots=3))
    assert [r.shot for r in traces] == [0, 1, 2]
    assert rep.runtimes_ns == [20, 20, 20]
