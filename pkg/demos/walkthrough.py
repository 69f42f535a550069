"""A guided tour: verify the running example, generate a witness from the
protection analysis, validate it under both semantics, then show that
confirmation judges a witness independently of the program's own asserts.

    python demos/walkthrough.py
"""

from pathlib import Path

from ghostwit.analysis import generate_witness, run_mutexmeet_analysis
from ghostwit.core import Const, Lock, Unlock
from ghostwit.format import emit_witness
from ghostwit.frontend import parse_expr, parse_program, render_program
from ghostwit.interleave import explore, format_counterexample
from ghostwit.traces import trace_safety
from ghostwit.witness import (
    GhostDecl, GhostWitness, Update, confirm, instrument, split, validate_interleaving, validate_local_trace,
)

HERE = Path(__file__).parent


def section(title):
    print(f"\n== {title}")


def main():
    text = (HERE / "running_example.cw").read_text()
    p, sm = parse_program(text)
    section("program")
    print(text, end="")

    section("exhaustive exploration")
    v = explore(p)
    print(v.kind.value, "after", v.stats["states"], "states")

    section("local traces (after giving each global its own mutex)")
    print(trace_safety(split(p)).kind.value)

    section("protection analysis")
    r = run_mutexmeet_analysis(p)
    print(r.report())

    w = generate_witness(p, r)
    section("instrumented program")
    print(render_program(instrument(p, w).program), end="")

    section("witness document")
    print(emit_witness(w, sm, {"file": "running_example.cw", "source": text}), end="")

    section("validation")
    print("interleavings:", validate_interleaving(p, w).kind.value)
    print("local traces: ", validate_local_trace(p, w).kind.value)

    # The variant resets `used` after releasing the lock, so main can read 47.
    text = (HERE / "unsafe_variant.cw").read_text()
    q, qsm = parse_program(text)
    section("unsafe variant")
    v = explore(q)
    print(v.kind.value)
    print(format_counterexample(v.counterexample, qsm))

    # Lowering the ghost at the reset instead of at t1's unlock keeps the
    # invariant true even though the program's own assert fails.
    ups = {}
    for e in q.edges():
        if isinstance(e.action, Lock):
            ups[e] = (Update("g", Const(1)),)
        elif isinstance(e.action, Unlock) and q.node_template[e.src] == "main":
            ups[e] = (Update("g", Const(0)),)
    ups[qsm.edges_at((11, 3))[0]] = (Update("g", Const(0)),)
    pre_lock = next(e.src for e in q.templates["main"].edges if isinstance(e.action, Lock))
    good = GhostWitness((GhostDecl("g", "int", Const(0)),), {}, ups, {pre_lock: parse_expr("g == 0 ==> used == 0")})
    r = validate_interleaving(q, good)
    print("validate:", r.kind.value, f"(failing assert comes from the {r.origin})")
    print("confirm: ", confirm(q, good).kind.value)


if __name__ == "__main__":
    main()
