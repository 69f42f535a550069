import pytest
from hypothesis import given, settings, strategies as st

from ghostwit.core import (
    Assert, Atomic, Binary, Const, Create, Edge, EvalError, GlobalDecl, Lock, Program, ThreadTemplate,
    Unary, Unlock, Var, c_div, c_mod, canonical_program, child_thread_id, compile_expr, conj, eval_expr,
    flatten, format_tid, structurally_equal, substitute, validate_program,
)
from ghostwit.frontend import parse_program

ARITH = ["+", "-", "*", "/", "%", "<", "<=", ">", ">=", "==", "!=", "&&", "||", "==>"]


def exprs():
    leaves = st.one_of(st.integers(-5, 5).map(Const), st.sampled_from(["x", "y"]).map(Var))
    return st.recursive(
        leaves,
        lambda sub: st.one_of(
            st.tuples(st.sampled_from(["!", "-"]), sub).map(lambda t: Unary(*t)),
            st.tuples(st.sampled_from(ARITH), sub, sub).map(lambda t: Binary(*t)),
        ),
        max_leaves=8,
    )


def test_c_division_truncates_toward_zero():
    assert c_div(7, 2) == 3
    assert c_div(-7, 2) == -3
    assert c_div(7, -2) == -3
    assert c_mod(-7, 2) == -1
    assert c_mod(7, -2) == 1


@given(st.integers(-50, 50), st.integers(-50, 50).filter(bool))
def test_c_division_identity(a, b):
    assert c_div(a, b) * b + c_mod(a, b) == a
    assert abs(c_mod(a, b)) < abs(b)


def test_division_by_zero_is_an_eval_error():
    with pytest.raises(EvalError):
        eval_expr(Binary("/", Var("x"), Const(0)), {"x": 1})


def test_thread_ids():
    assert child_thread_id((), 0) == (0,)
    assert child_thread_id((0,), 2) == (0, 2)
    assert format_tid(()) == "[]"
    assert format_tid((1, 0)) == "[1,0]"


def test_thread_id_only_compares_for_equality():
    env = {"self": (0,), "x": 0}
    assert eval_expr(Binary("==", Var("self"), Var("self")), env) == 1
    with pytest.raises(EvalError):
        eval_expr(Binary("+", Var("self"), Const(1)), env)
    with pytest.raises(EvalError):
        eval_expr(Unary("!", Var("self")), env)


def test_short_circuit():
    div0 = Binary("/", Const(1), Const(0))
    assert eval_expr(Binary("&&", Const(0), div0), {}) == 0
    assert eval_expr(Binary("||", Const(2), div0), {}) == 1
    assert eval_expr(Binary("==>", Const(0), div0), {}) == 1


@settings(max_examples=300)
@given(exprs(), st.integers(-4, 4), st.integers(-4, 4))
def test_compiled_expressions_agree_with_the_interpreter(e, x, y):
    env = {"x": x, "y": y}
    try:
        want = eval_expr(e, env)
    except EvalError:
        with pytest.raises(EvalError):
            compile_expr(e, {"x": 0, "y": 1})((x, y), None)
        return
    assert compile_expr(e, {"x": 0, "y": 1})((x, y), None) == want


@given(exprs())
def test_substitute_identity(e):
    assert substitute(e, lambda s: None) == e


def test_conj():
    assert conj([]) == Const(1)
    a, b = Var("a"), Var("b")
    assert conj([a]) == a
    assert eval_expr(conj([a, b]), {"a": 1, "b": 0}) == 0


def test_flatten():
    a = Atomic((Lock("m"), Assert(Const(1), "k")))
    assert flatten(a) == (Lock("m"), Assert(Const(1), "k"))
    assert flatten(Unlock("m")) == (Unlock("m"),)


def _tiny(edges, initial=0, nodes=None):
    t = ThreadTemplate("main", frozenset(nodes or {0, 1, 2}), tuple(edges), initial)
    return Program((GlobalDecl("g", "int", 0),), frozenset({"m"}), frozenset({"self", "x"}), {"main": t})


def test_validate_program_flags_edges_into_the_initial_node():
    p = _tiny([Edge(0, Lock("m"), 1), Edge(1, Unlock("m"), 0)])
    rules = [v.rule for v in validate_program(p)]
    assert "initial node has an incoming edge" in rules


def test_validate_program_flags_unknown_templates():
    p = _tiny([Edge(0, Create("nope"), 1)])
    assert validate_program(p)


def test_structural_equality_ignores_node_ids(running):
    p, _, text = running
    q, _ = parse_program("\n\n" + text)
    assert structurally_equal(p, q)
    shifted = {n: t for n, t in p.templates.items()}
    off = 100
    t = shifted["t1"]
    shifted["t1"] = ThreadTemplate("t1", frozenset(n + off for n in t.nodes),
                                   tuple(Edge(e.src + off, e.action, e.dst + off) for e in t.edges), t.initial + off)
    assert canonical_program(p.with_templates(shifted)) == canonical_program(p)


def test_structural_equality_sees_action_changes(running, unsafe_variant):
    assert not structurally_equal(running[0], unsafe_variant[0])
