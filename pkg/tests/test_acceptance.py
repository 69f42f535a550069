"""End-to-end acceptance checks.  Each test prints one ``PASS``/``FAIL`` line;
run with ``pytest tests/test_acceptance.py -s`` to see them inline (they are
also collected into the terminal summary)."""

import random
import re
import time

import yaml

from ghostwit.analysis import generate_witness, run_mutexmeet_analysis, run_protection_analysis
from ghostwit.core import EvalError, structurally_equal
from ghostwit.corpus import CorpusConfig, corpus, lang_mg_corpus, random_witness
from ghostwit.format import emit_witness, parse_witness
from ghostwit.frontend import parse_program
from ghostwit.interleave import Bounds, VerdictKind, explore, initial_state, replay, successors
from ghostwit.traces import (
    check_consistency, coincides, enumerate_global_traces, global_trace_to_interleaving, interleaving_to_global_trace,
    is_create_complete, trace_safety,
)
from ghostwit.witness import (
    WitnessVerdictKind, confirm, instrument, lift_interleaving, project_interleaving, project_state, split,
    validate_interleaving, validate_local_trace,
)

from conftest import load
from test_format import GHOST_ENTRY, INVARIANT, _strip_locations

RESULTS = []
# Loop-free corpus programs have short traces, but a trace of the split program
# can exceed the default event bound; use a bound that is never the limiting factor.
WIDE = Bounds(max_events=1024)
N = 200


def report(n, name, ok, detail=""):
    line = f"criterion {n} {'PASS' if ok else 'FAIL'}: {name}" + (f" ({detail})" if detail else "")
    RESULTS.append(line)
    print(line)
    assert ok, line


def _walk(p, rng, n):
    s = initial_state(p)
    steps = []
    for _ in range(n):
        succ = successors(p, s)
        if not succ:
            break
        step, s, _ = rng.choice(succ)
        steps.append(step)
    return replay(p, steps)[0]


def _dedup(keys):
    # witness checks are stuttering steps once ghosts are projected away
    out = []
    for k in keys:
        if not out or out[-1] != k:
            out.append(k)
    return out


def test_criterion_1_golden_pipeline():
    t0 = time.perf_counter()
    p, sm, text = load("running_example.cw")
    w = generate_witness(p, run_mutexmeet_analysis(p))
    ip = instrument(p, w)
    instrumented = load("running_example_instrumented.cw")[2]
    golden, _ = parse_program(re.sub(r"\bg\b", "m_locked", instrumented).replace("__inv_g", "__inv_m_locked"))
    shape_ok = structurally_equal(ip.program, golden)
    doc = yaml.safe_load(emit_witness(w, sm, {"file": "running_example.cw", "source": text}))
    renamed = _strip_locations([e["content"] for e in doc])
    expected = [[{"invariant": {**INVARIANT, "value": INVARIANT["value"].replace("g ==", "m_locked ==")}}],
                yaml.safe_load(yaml.safe_dump(GHOST_ENTRY).replace(": g\n", ": m_locked\n"))]
    yaml_ok = renamed == expected and all(list(e) == ["entry_type", "metadata", "content"] for e in doc)
    a = validate_interleaving(p, w).kind
    b = validate_local_trace(p, w).kind
    dt = time.perf_counter() - t0
    ok = shape_ok and yaml_ok and a == b == WitnessVerdictKind.VALID and dt < 5
    report(1, "golden pipeline", ok, f"instrumentation={shape_ok} yaml={yaml_ok} "
           f"interleaving={a.value} trace={b.value} {dt:.2f}s")


def test_criterion_2_trace_semantics_agree():
    t0 = time.perf_counter()
    bad = []
    for s, q in lang_mg_corpus(2, N):
        a = explore(q, WIDE, stop_on_violation=False)
        b = trace_safety(q, WIDE, stop_on_violation=False)
        if a.kind != b.kind or a.violated != b.violated or a.kind == VerdictKind.BOUND_EXCEEDED:
            bad.append(s.seed)
    dt = time.perf_counter() - t0
    report(2, "trace safety == interleaving safety", not bad and dt < 600,
           f"{N - len(bad)}/{N} agree, {dt:.1f}s" + (f", seeds {bad[:5]}" if bad else ""))


def _all_runs(p):
    """Every interleaving (each prefix included) of a loop-free program."""
    out = []

    def go(state, steps):
        out.append(list(steps))
        for step, nxt, _ in successors(p, state):
            steps.append(step)
            go(nxt, steps)
            steps.pop()

    go(initial_state(p), [])
    return out


def test_criterion_3_trace_interleaving_round_trips():
    # Small templates keep every run (and every trace) within 20 events, so
    # both directions can be checked exhaustively.
    bad = 0
    traces = 0
    runs = 0
    for s, q in lang_mg_corpus(3, 50, CorpusConfig(max_edges=4)):
        for gt in enumerate_global_traces(q, 20):
            if not is_create_complete(gt):
                continue
            traces += 1
            i = global_trace_to_interleaving(gt)
            if not coincides(i, gt) or interleaving_to_global_trace(i).key() != gt.key():
                bad += 1
        for steps in _all_runs(q):
            i, _ = replay(q, steps)
            gt = interleaving_to_global_trace(i)
            runs += 1
            if not (is_create_complete(gt) and check_consistency(gt) == [] and coincides(i, gt)):
                bad += 1
    report(3, "trace/interleaving round trips", bad == 0 and traces > 0,
           f"{traces} traces, {runs} interleavings, {bad} failures")


def test_criterion_4_instrumentation_preserves_behaviour():
    bad = []
    skipped = 0
    checked = 0
    for s in corpus(4, N, CorpusConfig(atomic=True)):
        rng = random.Random(s.seed)
        base = generate_witness(s.program, run_mutexmeet_analysis(s.program)) if rng.random() < 0.5 else None
        w = random_witness(rng, s.program, s.sm, base)
        ip = instrument(s.program, w)
        a = explore(s.program, stop_on_violation=False)
        b = explore(ip.program, stop_on_violation=False)
        if b.kind == VerdictKind.EVAL_ERROR and a.kind != VerdictKind.EVAL_ERROR:
            skipped += 1  # a ghost update divides by zero; not a program behaviour
            continue
        checked += 1
        if a.violated != b.violated & ip.original_asserts:
            bad.append(s.seed)
            continue
        for _ in range(5):
            try:
                i = _walk(s.program, rng, 30)
                lifted = lift_interleaving(ip, i)
                j = _walk(ip.program, rng, 40)
            except EvalError:
                continue
            back = project_interleaving(ip, lifted)
            again, _ = replay(s.program, project_interleaving(ip, j).steps)
            if ([x.key() for x in back.states] != [x.key() for x in i.states]
                    or _dedup(project_state(ip, x).key() for x in lifted.states) != [x.key() for x in i.states]
                    or again.states[-1].key() != project_state(ip, j.states[-1]).key()):
                bad.append(s.seed)
                break
    report(4, "instrumentation preserves original behaviour", not bad and checked >= N * 0.9,
           f"{checked} pairs checked, {skipped} skipped, {len(bad)} failures")


def test_criterion_5_split_preserves_safety():
    bad = []
    for s in corpus(5, N, CorpusConfig(atomic=True)):
        a = explore(s.program, stop_on_violation=False)
        b = explore(split(s.program), stop_on_violation=False)
        if a.kind != b.kind or a.violated != b.violated:
            bad.append(s.seed)
    report(5, "split preserves safety", not bad, f"{N - len(bad)}/{N} agree")


def test_criterion_6_witness_validity_agrees():
    bad = []
    kinds = {}
    for s in corpus(6, N, CorpusConfig(atomic=True)):
        rng = random.Random(s.seed)
        base = generate_witness(s.program, run_mutexmeet_analysis(s.program)) if rng.random() < 0.5 else None
        w = random_witness(rng, s.program, s.sm, base)
        a = validate_interleaving(s.program, w, WIDE)
        b = validate_local_trace(s.program, w, WIDE)
        kinds[a.kind.value] = kinds.get(a.kind.value, 0) + 1
        if a.kind != b.kind or a.kind == WitnessVerdictKind.BOUND_EXCEEDED:
            bad.append(s.seed)
    report(6, "witness validity agrees across semantics", not bad,
           f"{N - len(bad)}/{N} agree, verdicts {dict(sorted(kinds.items()))}")


def test_criterion_7_generated_witnesses_confirm():
    rejected = 0
    total = 0
    for s in corpus(7, 100, CorpusConfig(atomic=True)):
        for run in (run_protection_analysis, run_mutexmeet_analysis):
            r = run(s.program)
            for ghosts in (True, False):
                total += 1
                if confirm(s.program, generate_witness(s.program, r, ghosts=ghosts)).kind \
                        != WitnessVerdictKind.CONFIRMED:
                    rejected += 1
    report(7, "generated witnesses are never rejected", rejected == 0, f"{total - rejected}/{total} confirmed")


def test_criterion_8_format():
    bad = 0
    for k, s in enumerate(corpus(8, 100, CorpusConfig(atomic=True))):
        rng = random.Random(s.seed)
        base = generate_witness(s.program, run_mutexmeet_analysis(s.program)) if k % 2 else None
        w = random_witness(rng, s.program, s.sm, base)
        style = "c" if k % 3 == 0 else "arrow"
        text = emit_witness(w, s.sm, implication_style=style)
        back = parse_witness(text, s.program, s.sm)
        if back != w or emit_witness(back, s.sm, implication_style=style) != text:
            bad += 1
    p, sm, _ = load("running_example.cw")
    from ghostwit.witness import running_example_witness
    doc = yaml.safe_load(emit_witness(running_example_witness(p, sm), sm))
    golden = (_strip_locations(doc[0]["content"]) == [{"invariant": INVARIANT}]
              and _strip_locations(doc[1]["content"]) == GHOST_ENTRY
              and [e["entry_type"] for e in doc] == ["invariant_set", "ghost_instrumentation"])
    report(8, "witness format", bad == 0 and golden, f"{100 - bad}/100 round trips, golden={golden}")
