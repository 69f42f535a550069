import re
from dataclasses import replace

import pytest

from ghostwit.core import GlobalRead
from ghostwit.corpus import CorpusConfig, corpus
from ghostwit.frontend import parse_program
from ghostwit.interleave import Bounds, Step, VerdictKind, apply_step, explore, initial_state, replay
from ghostwit.traces import (
    GlobalTrace, LocalConfig, NotCreateComplete, NotInLangMG, check_consistency, coincides,
    enumerate_global_traces, global_trace_to_interleaving, interleaving_to_global_trace, is_create_complete,
    trace_safety,
)
from ghostwit.witness import split

from conftest import load
from oracles import naive_interleavings

SMALL = CorpusConfig(max_templates=2, max_edges=3, max_globals=1, max_mutexes=1, max_threads=2)


@pytest.fixture
def mg():
    return load("running_example_mg.cw")


def _run(p, schedule):
    """Interleaving following ``schedule`` (thread ids; each thread has one successor edge)."""
    s = initial_state(p)
    steps = []
    for tid in schedule:
        ts = s.thread(tid)
        (e,) = p.template_of(ts.node).out_edges[ts.node]
        steps.append(Step(tid, e))
        s, _ = apply_step(s, tid, e)
    return replay(p, steps)[0]


def _sample_trace(p):
    # t1 runs its critical section first, then main locks m, m_used, reads and asserts
    return interleaving_to_global_trace(_run(p, [()] + [(0,)] * 6 + [()] * 5))


def test_running_example_local_trace(mg):
    p, sm, _ = mg
    gt = _sample_trace(p)
    assert check_consistency(gt) == []
    ev = {(e.thread, e.n): i for i, e in enumerate(gt.events)}
    main = lambda n: ev[((), n)]  # noqa: E731
    t1 = lambda n: ev[((0,), n)]  # noqa: E731
    # main's initial configuration creates t1 and precedes the first
    # lock of each mutex; t1's unlocks precede main's locks
    assert gt.creates == [(main(0), t1(0))]
    assert sorted(gt.locks) == sorted([
        ("m", main(0), t1(1)), ("m_used", main(0), t1(2)),
        ("m", t1(6), main(2)), ("m_used", t1(5), main(3)),
    ])
    assert gt.maximal() == [main(6)]
    lt = gt.restrict(main(6))
    assert len(lt.events) == 14
    assert lt.ego == ()
    assert is_create_complete(gt)


def test_dump_format(mg):
    p, sm, _ = mg
    text = _sample_trace(p).dump(sm)
    lines = text.splitlines()
    assert lines[0] == "#0 thread=[] n=0 node=5:3 locals={self=[], tmp=0}"
    assert all(re.fullmatch(r"#\d+ thread=\[[\d,]*\] n=\d+ node=\S+ locals=\{.*\}", l) for l in lines[:14])
    assert all(re.fullmatch(r"(po|create|lock\(\w+\)): #\d+ -> #\d+", l) for l in lines[14:])
    assert "create: #0 -> #2" in lines


def _categories(gt):
    return {v.category for v in check_consistency(gt)}


def test_wrong_read_value_is_inconsistent(mg):
    p, _, _ = mg
    gt = _sample_trace(p)
    i = next(i for i, e in gt.steps.items() if isinstance(e.action, GlobalRead))
    ev = gt.events[i]
    gt.events[i] = replace(ev, locals=(ev.locals[0], 47))
    assert "Reads of Globals" in _categories(gt)


def test_missing_lock_order_is_inconsistent(mg):
    p, _, _ = mg
    gt = _sample_trace(p)
    gt.locks.pop()
    assert "Lock Order" in _categories(gt)


def test_second_lock_chain_successor_is_inconsistent(mg):
    p, _, _ = mg
    gt = _sample_trace(p)
    m, a, b = next(x for x in gt.locks if x[1] != 0)
    gt.locks.append((m, 0, b))
    assert "Lock Order" in _categories(gt)


def test_cycle_is_inconsistent(mg):
    p, _, _ = mg
    gt = _sample_trace(p)
    last = gt.maximal()[0]
    gt.creates.append((last, 0))
    assert "Causality Order" in _categories(gt)


def test_double_create_is_inconsistent(mg):
    p, _, _ = mg
    gt = _sample_trace(p)
    c0 = gt.creates[0][1]
    gt.creates.append((gt.index((), 1), c0))
    assert "Create Order" in _categories(gt)


def test_wrong_local_update_is_inconsistent():
    p, _ = parse_program("thread main { x = 1; }")
    s0 = initial_state(p)
    (e,) = p.templates["main"].edges
    gt = GlobalTrace(p, [LocalConfig((), 0, e.src, s0.threads[0].locals), LocalConfig((), 1, e.dst, ((), 2))],
                     {1: e})
    assert _categories(gt) == {"Program Order"}


def test_requires_mutex_per_global(running):
    p, _, _ = running
    with pytest.raises(NotInLangMG):
        trace_safety(p)
    with pytest.raises(NotInLangMG):
        next(enumerate_global_traces(p, 5))


def test_non_create_complete_trace(mg):
    p, _, _ = mg
    gt = _sample_trace(p)
    # keep only main's initial configuration and t1's first one
    lt = GlobalTrace(p, [gt.events[0], gt.events[gt.creates[0][1]]], {}, [(0, 1)], [])
    assert check_consistency(lt) == []
    assert not is_create_complete(lt)
    with pytest.raises(NotCreateComplete):
        global_trace_to_interleaving(lt)


def test_enumeration_is_consistent_and_duplicate_free(mg):
    p, _, _ = mg
    keys = set()
    for gt in enumerate_global_traces(p, 9):
        assert check_consistency(gt) == []
        assert len(gt.events) <= 9
        keys.add(gt.key())
        # causal pasts of traces are traces
        for i in range(len(gt.events)):
            assert check_consistency(gt.restrict(i)) == []
    assert len(keys) > 20


def _round_trips(p, max_events):
    """Create-complete traces == traces of interleavings; every one coincides both ways."""
    enumerated = {}
    for gt in enumerate_global_traces(p, max_events):
        if is_create_complete(gt):
            enumerated[gt.key()] = gt
    from_runs = set()
    for steps in naive_interleavings(p, max_events - 1):
        i, _ = replay(p, [Step(t, e) for t, e in steps])
        gt = interleaving_to_global_trace(i)
        assert coincides(i, gt)
        if len(gt.events) <= max_events:
            from_runs.add(gt.key())
    assert set(enumerated) == from_runs
    for gt in enumerated.values():
        i = global_trace_to_interleaving(gt)
        assert coincides(i, gt)
        assert interleaving_to_global_trace(i).key() == gt.key()
    return len(enumerated)


def test_trace_round_trips_running_example(mg):
    p, _, _ = mg
    assert _round_trips(p, 10) > 0


@pytest.mark.parametrize("seed", range(8))
def test_trace_round_trips_random(seed):
    for s in corpus(seed, 1, SMALL):
        _round_trips(split(s.program), 8)


def test_trace_safety_running_example(mg, unsafe_variant):
    p, _, _ = mg
    assert trace_safety(p).kind == VerdictKind.SAFE
    q = split(unsafe_variant[0])
    v = trace_safety(q)
    assert v.kind == VerdictKind.UNSAFE
    assert v.assert_id == "main.1"
    lt = v.counterexample
    assert check_consistency(lt) == []
    assert lt.maximal() == [lt.top]
    assert lt.steps[lt.top].action.id == "main.1"


@pytest.mark.parametrize("seed", range(30))
def test_trace_safety_agrees_with_interleavings(seed):
    (s,) = corpus(100 + seed, 1)
    q = split(s.program)
    a = explore(q, stop_on_violation=False)
    b = trace_safety(q, stop_on_violation=False)
    assert a.kind == b.kind
    assert a.violated == b.violated


def test_trace_safety_bound():
    p, _ = parse_program("thread main { while (1) { x = x + 1; } }")
    assert trace_safety(p, Bounds(max_events=10)).kind == VerdictKind.BOUND_EXCEEDED
