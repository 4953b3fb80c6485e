"""Cross-module invariants as hypothesis properties."""
import io
import itertools

from hypothesis import assume, given, settings, strategies as st

from dhisq import RandomOutcomes, SimConfig, Topology, assemble, run
from dhisq.node import TraceRecord
from dhisq.sim import Engine, RunReport, emit_telf, estimate_fidelity, parse_telf

from sync_oracles import nearby_resume

fast = settings(max_examples=60, deadline=None)


@fast
@given(st.lists(st.tuples(st.integers(0, 300), st.integers(0, 7), st.integers(0, 0xFFFF)), max_size=12))
def test_commits_land_on_their_stamps(ops):
    # lead time so the pipeline always runs ahead of the timer
    lead = 2 * len(ops) + 1
    stamps = list(itertools.accumulate((w for w, _, _ in ops), initial=lead))[1:]
    assume(len({(t, p) for t, (_, p, _) in zip(stamps, ops)}) == len(ops))
    src = f"waiti {lead}\n" + "".join(f"waiti {w}\ncw.i.i {p}, {c}\n" for w, p, c in ops)
    traces, rep = run(SimConfig(Topology.balanced(1), {0: assemble(src)}))
    assert rep.late_issues == 0
    want = sorted((t, p, c) for t, (_, p, c) in zip(stamps, ops))
    assert [(r.cycle, r.port, r.codeword) for r in traces] == want


@fast
@given(st.integers(2, 200), st.integers(2, 200), st.integers(1, 30))
def test_nearby_sync_is_symmetric(b_a, b_b, n):
    def resume(x, y):
        topo = Topology.balanced(2, mesh_latency=n)
        progs = {i: assemble(f"waiti {b}\nsync {1 - i}\nwaiti {n}\ncw.i.i 0, 1\n", controller=i)
                 for i, b in enumerate((x, y))}
        return sorted(r.cycle for r in run(SimConfig(topo, progs))[0])
    assert resume(b_a, b_b) == resume(b_b, b_a) == [nearby_resume(b_a, b_b, n)] * 2


def _late_booker(k: int, t: int, up: int, down: int):
    topo = Topology.balanced(2, up=up, down=down)
    rid = topo.root
    progs = {
        0: assemble(f"waiti {t}\nsync {rid}\ncw.i.i 0, 1\n"),
        1: assemble(f"addi r1, r0, {k}\nspin:\naddi r1, r1, -1\nbne r1, r0, spin\n"
                    f"waiti {t}\nsync {rid}\ncw.i.i 0, 1\n", controller=1),
    }
    eng = Engine(SimConfig(topo, progs), RandomOutcomes())
    eng.run()
    return eng


@fast
@given(st.integers(1, 80), st.integers(0, 200), st.integers(1, 8), st.integers(0, 8))
def test_shrinking_margin_never_helps(k, t, up, down):
    def overhead(kk):
        eng = _late_booker(kk, t, up, down)
        recs = [r for n in eng.nodes.values() for r in n.records]
        return max(r.resumed for r in recs) - max(r.proposed for r in recs)
    assert overhead(k + 1) >= overhead(k) >= 0


@fast
@given(st.integers(1, 80), st.integers(0, 200), st.integers(1, 8), st.integers(0, 8))
def test_messages_delivered_exactly_once(k, t, up, down):
    eng = _late_booker(k, t, up, down)
    assert eng.net.sent == eng.net.delivered and len(eng.net) == 0
    resumed = {r.resumed for n in eng.nodes.values() for r in n.records}
    assert len(resumed) == 1


labels = st.text(st.sampled_from("abcxyz q0123,"), max_size=12)


@fast
@given(st.lists(st.builds(TraceRecord, st.integers(0, 10 ** 6), st.integers(0, 254), st.integers(0, 255),
                          st.integers(0, 0xFFFF), labels, st.just(0)), max_size=20))
def test_telf_round_trip(records):
    buf = io.StringIO()
    emit_telf(records, buf)
    assert parse_telf(buf.getvalue()) == records


@fast
@given(st.lists(st.integers(0, 10 ** 6), min_size=1, max_size=6), st.floats(1e-6, 1e-3), st.floats(1e-6, 1e-3))
def test_infidelity_bounded_and_monotone(spans, t1, t2):
    def inf(scale):
        rep = RunReport("bisp", 4, qubit_windows=[{f"q{i}": (0, s * scale) for i, s in enumerate(spans)}])
        return estimate_fidelity(rep, t1, t2)
    a, b = inf(1), inf(2)
    assert 0.0 <= a <= b <= 1.0


@fast
@given(st.integers(0, 2 ** 31), st.integers(0, 7), st.integers(0, 50))
def test_random_outcomes_are_reproducible(seed, port, k):
    assert RandomOutcomes(seed)(0, port, 0, k) == RandomOutcomes(seed)(0, port, 0, k)
