"""Program model: expressions, actions, thread templates and programs.

Values are unbounded Python ints; booleans are encoded as 0/1.  The only
non-integer value is a thread id (a tuple of ints), which is what ``self``
evaluates to and which may only be compared for (in)equality.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Iterator, Mapping, Optional, Union

ThreadId = tuple  # tuple[int, ...]; () is the initial thread

SELF = "self"


def child_thread_id(parent: ThreadId, prior_creates: int) -> ThreadId:
    """Id of the thread created by ``parent`` after it created ``prior_creates`` others."""
    return tuple(parent) + (prior_creates,)


def format_tid(tid: ThreadId) -> str:
    return "[" + ",".join(str(i) for i in tid) + "]"


# ---------------------------------------------------------------------------
# Expressions


@dataclass(frozen=True)
class Const:
    value: int


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class GlobalRef:
    """Reference to a global; inside a program only legal in a GlobalRead."""

    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # '-' or '!'
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Const, Var, GlobalRef, Unary, Binary]

ARITH_OPS = ("+", "-", "*", "/", "%")
ORDER_OPS = ("<", "<=", ">", ">=")
EQ_OPS = ("==", "!=")
BOOL_OPS = ("&&", "||", "==>")

TRUE = Const(1)


class EvalError(Exception):
    """Evaluation failure (division by zero, ill-typed thread id use)."""

    def __init__(self, expr, message: str):
        super().__init__(message)
        self.expr = expr
        self.message = message


def sub_exprs(e: Expr) -> Iterator[Expr]:
    yield e
    if isinstance(e, Unary):
        yield from sub_exprs(e.operand)
    elif isinstance(e, Binary):
        yield from sub_exprs(e.left)
        yield from sub_exprs(e.right)


def expr_locals(e: Expr) -> set[str]:
    return {s.name for s in sub_exprs(e) if isinstance(s, Var)}


def expr_globals(e: Expr) -> set[str]:
    return {s.name for s in sub_exprs(e) if isinstance(s, GlobalRef)}


def substitute(e: Expr, mapping: Callable[[Expr], Optional[Expr]]) -> Expr:
    """Rebuild ``e`` bottom-up, replacing any node for which ``mapping`` returns non-None."""
    r = mapping(e)
    if r is not None:
        return r
    if isinstance(e, Unary):
        return Unary(e.op, substitute(e.operand, mapping))
    if isinstance(e, Binary):
        return Binary(e.op, substitute(e.left, mapping), substitute(e.right, mapping))
    return e


def conj(parts: Iterable[Expr]) -> Expr:
    parts = list(parts)
    if not parts:
        return TRUE
    out = parts[0]
    for p in parts[1:]:
        out = Binary("&&", out, p)
    return out


def _truthy(v) -> bool:
    return v != 0


def _int_operand(e, v):
    if isinstance(v, tuple):
        raise EvalError(e, "thread id used as a number")
    return v


def c_div(a: int, b: int) -> int:
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


def c_mod(a: int, b: int) -> int:
    return a - b * c_div(a, b)


def eval_expr(e: Expr, l: Mapping[str, object], g=None):
    """Evaluate ``e`` on local state ``l``; ``g`` is the value behind any GlobalRef."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return l[e.name]
    if isinstance(e, GlobalRef):
        if g is None:
            raise EvalError(e, f"no value supplied for global {e.name}")
        return g
    if isinstance(e, Unary):
        v = eval_expr(e.operand, l, g)
        if e.op == "!":
            if isinstance(v, tuple):
                raise EvalError(e, "thread id used as a boolean")
            return 0 if _truthy(v) else 1
        return -_int_operand(e, v)
    op = e.op
    if op in ("&&", "||", "==>"):
        a = eval_expr(e.left, l, g)
        if isinstance(a, tuple):
            raise EvalError(e, "thread id used as a boolean")
        if op == "&&" and not _truthy(a):
            return 0
        if op == "||" and _truthy(a):
            return 1
        if op == "==>" and not _truthy(a):
            return 1
        b = eval_expr(e.right, l, g)
        if isinstance(b, tuple):
            raise EvalError(e, "thread id used as a boolean")
        return 1 if _truthy(b) else 0
    a = eval_expr(e.left, l, g)
    b = eval_expr(e.right, l, g)
    if op == "==":
        return 1 if a == b else 0
    if op == "!=":
        return 1 if a != b else 0
    a = _int_operand(e, a)
    b = _int_operand(e, b)
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if b == 0:
            raise EvalError(e, "division by zero")
        return c_div(a, b)
    if op == "%":
        if b == 0:
            raise EvalError(e, "modulo by zero")
        return c_mod(a, b)
    if op == "<":
        return 1 if a < b else 0
    if op == "<=":
        return 1 if a <= b else 0
    if op == ">":
        return 1 if a > b else 0
    if op == ">=":
        return 1 if a >= b else 0
    raise ValueError(f"unknown operator {op}")


# Alias matching the operation name used throughout the package.
eval = eval_expr  # noqa: A001


def compile_expr(e: Expr, index: Mapping[str, int]) -> Callable[[tuple, object], object]:
    """Compile ``e`` into a closure over a locals tuple laid out by ``index``.

    Semantics are identical to :func:`eval_expr`; the explorers use this form.
    """
    if isinstance(e, Const):
        v = e.value
        return lambda l, g: v
    if isinstance(e, Var):
        i = index[e.name]
        return lambda l, g: l[i]
    if isinstance(e, GlobalRef):
        def glob(l, g, e=e):
            if g is None:
                raise EvalError(e, f"no value supplied for global {e.name}")
            return g
        return glob
    if isinstance(e, Unary):
        f = compile_expr(e.operand, index)
        if e.op == "!":
            def neg(l, g):
                v = f(l, g)
                if isinstance(v, tuple):
                    raise EvalError(e, "thread id used as a boolean")
                return 0 if v != 0 else 1
            return neg

        def minus(l, g):
            return -_int_operand(e, f(l, g))
        return minus
    fa = compile_expr(e.left, index)
    fb = compile_expr(e.right, index)
    op = e.op
    if op in BOOL_OPS:
        def boolean(l, g):
            a = fa(l, g)
            if isinstance(a, tuple):
                raise EvalError(e, "thread id used as a boolean")
            if op == "&&" and a == 0:
                return 0
            if op == "||" and a != 0:
                return 1
            if op == "==>" and a == 0:
                return 1
            b = fb(l, g)
            if isinstance(b, tuple):
                raise EvalError(e, "thread id used as a boolean")
            return 1 if b != 0 else 0
        return boolean
    if op == "==":
        return lambda l, g: 1 if fa(l, g) == fb(l, g) else 0
    if op == "!=":
        return lambda l, g: 1 if fa(l, g) != fb(l, g) else 0

    def arith(l, g):
        a = _int_operand(e, fa(l, g))
        b = _int_operand(e, fb(l, g))
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            if b == 0:
                raise EvalError(e, "division by zero")
            return c_div(a, b)
        if op == "%":
            if b == 0:
                raise EvalError(e, "modulo by zero")
            return c_mod(a, b)
        if op == "<":
            return 1 if a < b else 0
        if op == "<=":
            return 1 if a <= b else 0
        if op == ">":
            return 1 if a > b else 0
        if op == ">=":
            return 1 if a >= b else 0
        raise ValueError(op)
    return arith


# ---------------------------------------------------------------------------
# Actions


@dataclass(frozen=True)
class Lock:
    mutex: str


@dataclass(frozen=True)
class Unlock:
    mutex: str


@dataclass(frozen=True)
class Create:
    template: str


@dataclass(frozen=True)
class LocalUpdate:
    target: str
    expr: Expr


@dataclass(frozen=True)
class GlobalRead:
    target: str
    glob: str
    expr: Expr


@dataclass(frozen=True)
class GlobalWrite:
    glob: str
    expr: Expr


@dataclass(frozen=True)
class Assert:
    cond: Expr
    id: str


@dataclass(frozen=True)
class Pos:
    cond: Expr


@dataclass(frozen=True)
class Neg:
    cond: Expr


@dataclass(frozen=True)
class Atomic:
    actions: tuple


Action = Union[Lock, Unlock, Create, LocalUpdate, GlobalRead, GlobalWrite, Assert, Pos, Neg, Atomic]

ALWAYS_ADMISSIBLE = (LocalUpdate, GlobalRead, GlobalWrite)


def flatten(a: Action) -> tuple:
    return a.actions if isinstance(a, Atomic) else (a,)


def action_exprs(a: Action) -> Iterator[Expr]:
    for b in flatten(a):
        if isinstance(b, (LocalUpdate, GlobalRead, GlobalWrite)):
            yield b.expr
        elif isinstance(b, (Assert, Pos, Neg)):
            yield b.cond


def accessed_globals(a: Action) -> set[str]:
    out = set()
    for b in flatten(a):
        if isinstance(b, (GlobalRead, GlobalWrite)):
            out.add(b.glob)
    return out


def written_locals(a: Action) -> set[str]:
    return {b.target for b in flatten(a) if isinstance(b, (LocalUpdate, GlobalRead))}


@dataclass(frozen=True)
class Edge:
    src: int
    action: Action
    dst: int


@dataclass(frozen=True)
class GlobalDecl:
    name: str
    type: str
    init: int


@dataclass(frozen=True)
class ThreadTemplate:
    name: str
    nodes: frozenset
    edges: tuple
    initial: int

    @cached_property
    def out_edges(self) -> dict:
        out = {n: [] for n in self.nodes}
        for e in self.edges:
            out.setdefault(e.src, []).append(e)
        return {n: tuple(es) for n, es in out.items()}

    @cached_property
    def in_edges(self) -> dict:
        inc = {n: [] for n in self.nodes}
        for e in self.edges:
            inc.setdefault(e.dst, []).append(e)
        return {n: tuple(es) for n, es in inc.items()}


@dataclass(frozen=True, eq=False)
class Program:
    globals: tuple  # of GlobalDecl, in declaration order
    mutexes: frozenset
    locals: frozenset  # includes "self"
    templates: Mapping[str, ThreadTemplate] = field(default_factory=dict)

    @cached_property
    def global_names(self) -> tuple:
        return tuple(d.name for d in self.globals)

    @cached_property
    def global_init(self) -> dict:
        return {d.name: d.init for d in self.globals}

    @cached_property
    def node_template(self) -> dict:
        return {n: t.name for t in self.templates.values() for n in t.nodes}

    def template_of(self, node: int) -> ThreadTemplate:
        return self.templates[self.node_template[node]]

    def edges(self) -> Iterator[Edge]:
        for t in self.templates.values():
            yield from t.edges

    def with_templates(self, templates, **changes) -> "Program":
        return Program(
            globals=changes.get("globals", self.globals),
            mutexes=frozenset(changes.get("mutexes", self.mutexes)),
            locals=frozenset(changes.get("locals", self.locals)),
            templates=dict(templates),
        )

    def __eq__(self, other):
        if not isinstance(other, Program):
            return NotImplemented
        return (
            self.globals == other.globals
            and self.mutexes == other.mutexes
            and self.locals == other.locals
            and dict(self.templates) == dict(other.templates)
        )

    __hash__ = None


# ---------------------------------------------------------------------------
# Structural comparison (node ids abstracted away)


def _action_key(a: Action):
    return repr(a)


def _node_signatures(t: ThreadTemplate) -> dict:
    # Refine node colours by outgoing (action, successor colour) until stable,
    # so that edges with equal actions are still ordered independently of ids.
    sig = {n: 0 for n in t.nodes}
    for _ in range(min(len(t.nodes), 40)):
        keys = {
            n: tuple(sorted((_action_key(e.action), sig[e.dst]) for e in t.out_edges.get(n, ())))
            for n in t.nodes
        }
        ranks = {k: i for i, k in enumerate(sorted(set(keys.values())))}
        new = {n: ranks[keys[n]] for n in t.nodes}
        if len(set(new.values())) == len(set(sig.values())):
            sig = new
            break
        sig = new
    return sig


def canonical_template(t: ThreadTemplate) -> tuple:
    """Relabel reachable nodes in DFS order from the initial node."""
    sig = _node_signatures(t)
    label = {t.initial: 0}
    order = [t.initial]
    stack = [t.initial]
    while stack:
        u = stack.pop()
        succ = sorted(t.out_edges.get(u, ()), key=lambda e: (_action_key(e.action), sig[e.dst]))
        for e in reversed(succ):
            if e.dst not in label:
                label[e.dst] = len(label)
                order.append(e.dst)
                stack.append(e.dst)
    edges = sorted(
        (label[e.src], _action_key(e.action), label[e.dst])
        for e in t.edges
        if e.src in label
    )
    return (t.name, len(label), tuple(edges))


def canonical_program(p: Program) -> tuple:
    return (
        tuple(sorted(p.globals, key=lambda d: d.name)),
        tuple(sorted(p.mutexes)),
        tuple(sorted(p.locals)),
        tuple(canonical_template(p.templates[n]) for n in sorted(p.templates)),
    )


def structurally_equal(p: Program, q: Program) -> bool:
    return canonical_program(p) == canonical_program(q)


# ---------------------------------------------------------------------------
# Well-formedness


@dataclass(frozen=True)
class Violation:
    location: str
    rule: str

    def __str__(self):
        return f"{self.location}: {self.rule}"


def validate_program(p: Program) -> list[Violation]:
    """Return every violated well-formedness rule; empty means valid."""
    report: list[Violation] = []

    def bad(loc, rule):
        report.append(Violation(loc, rule))

    gnames = set(p.global_names)
    if len(gnames) != len(p.globals):
        bad("globals", "duplicate global declaration")
    if "main" not in p.templates:
        bad("program", "no main")
    for g in sorted(gnames & set(p.mutexes)):
        bad(g, "name is both a global and a mutex")
    for g in sorted(gnames & set(p.locals)):
        bad(g, "name is both a global and a local")
    if SELF not in p.locals:
        bad("locals", "self is not a local variable")

    seen_nodes: dict[int, str] = {}
    for name, t in p.templates.items():
        if name != t.name:
            bad(name, f"template registered under name {name} but named {t.name}")
        for n in t.nodes:
            if n in seen_nodes:
                bad(f"{name}:{n}", f"node shared with template {seen_nodes[n]}")
            seen_nodes[n] = name
        if t.initial not in t.nodes:
            bad(name, "initial node not in node set")
        pairs: dict = {}
        for e in t.edges:
            loc = f"{name}:{e.src}->{e.dst}"
            if e.src not in t.nodes or e.dst not in t.nodes:
                bad(loc, "edge endpoint outside template")
            if (e.src, e.dst) in pairs:
                bad(loc, f"duplicate edge ({e.src},{e.dst})")
            pairs[(e.src, e.dst)] = e
            if e.dst == t.initial:
                bad(loc, "initial node has an incoming edge")
            _check_action(p, e.action, loc, bad)
    return report


def _check_expr(p, e, loc, bad, allow_global=None):
    for s in sub_exprs(e):
        if isinstance(s, Var) and s.name not in p.locals:
            bad(loc, f"undeclared local {s.name}")
        elif isinstance(s, GlobalRef):
            if allow_global is None:
                bad(loc, f"global {s.name} referenced outside a global read")
            elif s.name != allow_global:
                bad(loc, f"global read of {allow_global} references {s.name}")


def _check_action(p, a, loc, bad, nested=False):
    if isinstance(a, Atomic):
        if nested:
            bad(loc, "nested atomic block")
            return
        if not a.actions:
            bad(loc, "empty atomic block")
        for i, b in enumerate(a.actions):
            if isinstance(b, Atomic):
                bad(loc, "nested atomic block")
                continue
            if i > 0 and not isinstance(b, ALWAYS_ADMISSIBLE + (Assert,)):
                bad(loc, f"atomic member {i} must be always admissible")
            _check_action(p, b, loc, bad, nested=True)
        return
    if isinstance(a, (Lock, Unlock)):
        if a.mutex not in p.mutexes:
            bad(loc, f"undeclared mutex {a.mutex}")
    elif isinstance(a, Create):
        if a.template not in p.templates:
            bad(loc, f"unknown template {a.template}")
    elif isinstance(a, LocalUpdate):
        _check_target(p, a.target, loc, bad)
        _check_expr(p, a.expr, loc, bad)
    elif isinstance(a, GlobalRead):
        _check_target(p, a.target, loc, bad)
        if a.glob not in p.global_names:
            bad(loc, f"undeclared global {a.glob}")
        _check_expr(p, a.expr, loc, bad, allow_global=a.glob)
    elif isinstance(a, GlobalWrite):
        if a.glob not in p.global_names:
            bad(loc, f"undeclared global {a.glob}")
        _check_expr(p, a.expr, loc, bad)
    elif isinstance(a, (Assert, Pos, Neg)):
        _check_expr(p, a.cond, loc, bad)
    else:
        bad(loc, f"unknown action {a!r}")


def _check_target(p, target, loc, bad):
    if target == SELF:
        bad(loc, "self is written")
    elif target not in p.locals:
        bad(loc, f"undeclared local {target}")


def assert_ids(p: Program) -> set[str]:
    return {b.id for e in p.edges() for b in flatten(e.action) if isinstance(b, Assert)}
