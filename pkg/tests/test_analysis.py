import pytest
from hypothesis import assume, given, settings, strategies as st

from ghostwit.analysis import (
    BOTTOM, INF, TOP, Interval, generate_witness, interval_eval, interval_expr, run_mutexmeet_analysis,
    run_protection_analysis,
)
from ghostwit.core import EvalError, eval_expr
from ghostwit.corpus import CorpusConfig, corpus
from ghostwit.frontend import parse_expr
from ghostwit.witness import WitnessVerdictKind, confirm, validate_interleaving

from oracles import naive_explore
from test_core import exprs

bounds_ = st.one_of(st.just(None), st.integers(-5, 5))


@st.composite
def intervals(draw):
    a, b = draw(bounds_), draw(bounds_)
    lo = -INF if a is None else a
    hi = INF if b is None else b
    return Interval(lo, hi) if lo <= hi else BOTTOM


@given(intervals(), intervals(), intervals())
def test_lattice_laws(a, b, c):
    assert a.join(b) == b.join(a)
    assert a.meet(b) == b.meet(a)
    assert a.join(b.join(c)) == a.join(b).join(c)
    assert a.leq(a.join(b)) and b.leq(a.join(b))
    assert a.meet(b).leq(a) and a.meet(b).leq(b)
    assert a.join(a) == a
    assert BOTTOM.leq(a) and a.leq(TOP)


@given(intervals(), intervals())
def test_widening_is_an_upper_bound(a, b):
    w = a.widen(b)
    assert a.leq(w) and b.leq(w)


def test_interval_rendering():
    assert str(Interval(0, 0)) == "[0,0]"
    assert str(TOP) == "[-inf,+inf]"
    assert str(Interval(-INF, 3)) == "[-inf,3]"
    assert str(BOTTOM) == "bot"
    assert interval_expr("x", TOP) is None
    assert interval_expr("x", Interval(2, 2)) == parse_expr("x == 2")


@settings(max_examples=300)
@given(exprs(), st.integers(-3, 3), st.integers(-3, 3), st.integers(0, 2), st.integers(0, 2))
def test_interval_eval_is_sound(e, x, y, wx, wy):
    try:
        v = eval_expr(e, {"x": x, "y": y})
    except EvalError:
        return
    assume(isinstance(v, int))
    env = {"x": Interval(x - wx, x + wx), "y": Interval(y - wy, y + wy)}
    assert v in interval_eval(e, env)


def test_running_example_report(running):
    p, _, _ = running
    expected = "used: M[g]={m} [g]=[0,0]\nm: G[m]={used} [m]=used == 0"
    assert run_mutexmeet_analysis(p).report() == expected
    assert run_protection_analysis(p).report() == expected


def test_unsafe_variant_report(unsafe_variant):
    p, _, _ = unsafe_variant
    r = run_mutexmeet_analysis(p)
    # the reset of used happens outside the critical section
    assert r.protecting["used"] == frozenset()
    assert r.protected["used"] == TOP


def test_unprotected_global_is_top():
    from ghostwit.frontend import parse_program
    p, _ = parse_program("global g: int = 0; mutex m; thread main { create(t); g = 1; } thread t { x = g; }")
    r = run_protection_analysis(p)
    assert r.protecting["g"] == frozenset()
    assert r.protected["g"] == TOP


def _check_sound(p, r):
    states, _ = naive_explore(p)
    for s in states.values():
        for tid, (node, locs, _) in s.threads.items():
            a = r.state_at(p.node_template[node], node)
            assert a is not None, f"reachable node {node} is dead in the analysis"
            for x, iv in a.env.items():
                if x in locs and isinstance(locs[x], int):
                    assert locs[x] in iv, (node, x, locs[x], iv)
        if len(s.threads) < 2:
            continue
        for g in p.global_names:
            if not r.protecting[g] & set(s.held):
                assert s.globals[g] in r.protected[g], (g, s.globals[g], r.protected[g])
        for m, mi in r.mutex_inv.items():
            if m in s.held or mi.bottom:
                continue
            for g, iv in mi.box.items():
                if g in r.guarded[m]:
                    assert s.globals[g] in iv, (m, g, s.globals[g], iv)
            for q in mi.eqs:
                a_, b_ = sorted(q)
                assert s.globals[a_] == s.globals[b_]


@pytest.mark.parametrize("mode", ["protection", "mutexmeet"])
@pytest.mark.parametrize("seed", range(15))
def test_analysis_is_sound_on_reachable_states(mode, seed):
    run = run_protection_analysis if mode == "protection" else run_mutexmeet_analysis
    for s in corpus(seed, 4, CorpusConfig(atomic=seed % 2 == 1)):
        _check_sound(s.program, run(s.program))


def test_running_example_witness_shape(running):
    p, sm, _ = running
    w = generate_witness(p, run_mutexmeet_analysis(p))
    assert [d.name for d in w.globals] == ["m_locked"]
    (inv,) = set(w.invariants.values())
    assert inv == parse_expr("m_locked == 0 ==> used == 0")
    assert validate_interleaving(p, w).kind == WitnessVerdictKind.VALID


def test_ghost_names_avoid_program_names():
    from ghostwit.frontend import parse_program
    p, _ = parse_program("global m_locked: int = 0; mutex m; thread main { create(t); } thread t { lock(m); unlock(m); }")
    w = generate_witness(p, run_mutexmeet_analysis(p))
    assert [d.name for d in w.globals] == ["m_locked_"]


def test_mode_mismatch_is_rejected(running):
    p, _, _ = running
    with pytest.raises(ValueError):
        generate_witness(p, run_mutexmeet_analysis(p), mode="protection")


@pytest.mark.parametrize("ghosts", [True, False])
@pytest.mark.parametrize("mode", ["protection", "mutexmeet"])
def test_generated_witnesses_confirm(mode, ghosts):
    run = run_protection_analysis if mode == "protection" else run_mutexmeet_analysis
    for s in corpus(99, 30, CorpusConfig(atomic=True)):
        w = generate_witness(s.program, run(s.program), ghosts=ghosts)
        assert confirm(s.program, w).kind == WitnessVerdictKind.CONFIRMED, s.source
