"""Interleaving semantics and exhaustive breadth-first exploration."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .core import (
    SELF, Assert, Create, Edge, EvalError, GlobalRead, GlobalWrite, LocalUpdate,
    Lock, Neg, Pos, Program, Unlock, child_thread_id, compile_expr, flatten, format_tid,
)


class Layout:
    """Index tables and compiled actions for one program."""

    def __init__(self, p: Program):
        self.program = p
        self.local_names = (SELF,) + tuple(sorted(p.locals - {SELF}))
        self.lidx = {x: i for i, x in enumerate(self.local_names)}
        self.global_names = p.global_names
        self.gidx = {g: i for i, g in enumerate(self.global_names)}
        self.bool_globals = frozenset(i for i, d in enumerate(p.globals) if d.type == "bool")
        self.mutex_names = tuple(sorted(p.mutexes))
        self.midx = {m: i for i, m in enumerate(self.mutex_names)}
        self.out = {}
        for t in p.templates.values():
            for n in t.nodes:
                self.out[n] = t.out_edges.get(n, ())
        self.ops = {e: tuple(self._compile(a) for a in flatten(e.action)) for e in p.edges()}
        self.guards = {}
        for e in p.edges():
            first = flatten(e.action)[0]
            if isinstance(first, (Pos, Neg)):
                self.guards[e] = (isinstance(first, Pos), compile_expr(first.cond, self.lidx))

    def _compile(self, a):
        if isinstance(a, Lock):
            return ("lock", self.midx[a.mutex])
        if isinstance(a, Unlock):
            return ("unlock", self.midx[a.mutex])
        if isinstance(a, Create):
            return ("create", self.program.templates[a.template].initial)
        if isinstance(a, LocalUpdate):
            return ("local", self.lidx[a.target], compile_expr(a.expr, self.lidx))
        if isinstance(a, GlobalRead):
            return ("read", self.lidx[a.target], self.gidx[a.glob], compile_expr(a.expr, self.lidx))
        if isinstance(a, GlobalWrite):
            gi = self.gidx[a.glob]
            return ("write", gi, compile_expr(a.expr, self.lidx), gi in self.bool_globals)
        if isinstance(a, Assert):
            return ("assert", a.id, compile_expr(a.cond, self.lidx))
        if isinstance(a, (Pos, Neg)):
            return ("guard",)
        raise TypeError(f"cannot execute {a!r}")


_LAYOUTS: dict = {}


def layout_of(p: Program) -> Layout:
    hit = _LAYOUTS.get(id(p))
    if hit is not None and hit[0] is p:
        return hit[1]
    if len(_LAYOUTS) > 256:
        _LAYOUTS.clear()
    lay = Layout(p)
    _LAYOUTS[id(p)] = (p, lay)
    return lay


@dataclass(frozen=True)
class ThreadState:
    tid: tuple
    node: int
    locals: tuple  # values laid out by Layout.local_names
    creates: int = 0


@dataclass(frozen=True)
class State:
    """(L, M, G) plus per-thread create counters, in canonical order."""

    threads: tuple  # ThreadState, sorted by thread id
    held: tuple  # holder thread id (or None) per mutex, in Layout.mutex_names order
    globals: tuple  # values in declaration order
    layout: Layout = field(compare=False, repr=False, default=None)

    @property
    def L(self) -> dict:
        names = self.layout.local_names
        return {t.tid: (t.node, dict(zip(names, t.locals))) for t in self.threads}

    @property
    def M(self) -> dict:
        return {m: h for m, h in zip(self.layout.mutex_names, self.held) if h is not None}

    @property
    def G(self) -> dict:
        return dict(zip(self.layout.global_names, self.globals))

    def thread(self, tid) -> Optional[ThreadState]:
        for t in self.threads:
            if t.tid == tid:
                return t
        return None

    def key(self):
        return (self.threads, self.held, self.globals)


@dataclass(frozen=True)
class Step:
    thread: tuple
    edge: Edge


@dataclass(frozen=True)
class Interleaving:
    states: tuple
    steps: tuple

    def __post_init__(self):
        if len(self.states) != len(self.steps) + 1:
            raise ValueError("an interleaving alternates states and steps and starts with a state")

    def __len__(self):
        return len(self.steps)


def initial_state(p: Program, ghost_init=None) -> State:
    lay = layout_of(p)
    l0 = tuple(() if x == SELF else 0 for x in lay.local_names)
    main = ThreadState((), p.templates["main"].initial, l0, 0)
    gvals = [d.init for d in p.globals]
    if ghost_init:
        for g, v in ghost_init.items():
            gvals[lay.gidx[g]] = v
    return State((main,), (None,) * len(lay.mutex_names), tuple(gvals), lay)


def _thread_index(s: State, tid) -> int:
    for i, t in enumerate(s.threads):
        if t.tid == tid:
            return i
    raise KeyError(f"thread {format_tid(tid)} does not exist")


def admissible(s: State, t, e: Edge) -> bool:
    lay = s.layout
    ts = s.threads[_thread_index(s, t)]
    if ts.node != e.src:
        raise ValueError(f"thread {format_tid(t)} is at node {ts.node}, not {e.src}")
    return _admissible(lay, s, ts, e)


def _admissible(lay, s, ts, e) -> bool:
    op = lay.ops[e][0]
    kind = op[0]
    if kind == "lock":
        return s.held[op[1]] is None
    if kind == "unlock":
        return s.held[op[1]] == ts.tid
    if kind == "guard":
        positive, f = lay.guards[e]
        v = f(ts.locals, None)
        if isinstance(v, tuple):
            raise EvalError(None, "thread id used as a boolean")
        return (v != 0) == positive
    return True


def apply_step(s: State, t, e: Edge) -> tuple:
    """Apply an admissible step; returns ``(new_state, violated_assert_ids)``."""
    if not admissible(s, t, e):
        raise ValueError(f"step {e} is not admissible for thread {format_tid(t)}")
    return _apply(s.layout, s, _thread_index(s, t), e)


def _apply(lay, s, ti, e):
    ts = s.threads[ti]
    tid = ts.tid
    loc = list(ts.locals)
    g = s.globals
    held = s.held
    creates = ts.creates
    children = []
    violations = []
    for op in lay.ops[e]:
        kind = op[0]
        if kind == "local":
            loc[op[1]] = op[2](loc, None)
        elif kind == "read":
            loc[op[1]] = op[3](loc, g[op[2]])
        elif kind == "write":
            v = op[2](loc, None)
            if isinstance(v, tuple):
                raise EvalError(None, "thread id stored in a global")
            if op[3]:
                v = 1 if v != 0 else 0
            g = g[:op[1]] + (v,) + g[op[1] + 1:]
        elif kind == "assert":
            v = op[2](loc, None)
            if isinstance(v, tuple):
                raise EvalError(None, "thread id used as a boolean")
            if v == 0:
                violations.append(op[1])
        elif kind == "lock":
            held = held[:op[1]] + (tid,) + held[op[1] + 1:]
        elif kind == "unlock":
            held = held[:op[1]] + (None,) + held[op[1] + 1:]
        elif kind == "create":
            ctid = child_thread_id(tid, creates)
            creates += 1
            cl = list(loc)
            cl[0] = ctid
            children.append(ThreadState(ctid, op[1], tuple(cl), 0))
        # guards have no effect
    threads = list(s.threads)
    threads[ti] = ThreadState(tid, e.dst, tuple(loc), creates)
    if children:
        threads.extend(children)
        threads.sort(key=lambda x: x.tid)
    return State(tuple(threads), held, g, lay), violations


def successors(p: Program, s: State) -> list:
    """All admissible steps from ``s`` as ``(Step, State, violations)`` in canonical order."""
    lay = s.layout or layout_of(p)
    out = []
    for ti, ts in enumerate(s.threads):
        for e in lay.out.get(ts.node, ()):
            if _admissible(lay, s, ts, e):
                ns, viol = _apply(lay, s, ti, e)
                out.append((Step(ts.tid, e), ns, viol))
    return out


def is_terminal(s: State) -> bool:
    lay = s.layout
    return all(not lay.out.get(t.node) for t in s.threads)


# ---------------------------------------------------------------------------
# Exploration


class VerdictKind(str, enum.Enum):
    SAFE = "SAFE"
    UNSAFE = "UNSAFE"
    EVAL_ERROR = "EVAL_ERROR"
    BOUND_EXCEEDED = "BOUND_EXCEEDED"


@dataclass(frozen=True)
class Bounds:
    max_steps: int = 10_000
    max_states: int = 1_000_000
    max_events: int = 64

    def __post_init__(self):
        for name in ("max_steps", "max_states", "max_events"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class Verdict:
    kind: VerdictKind
    counterexample: Optional[Interleaving] = None
    assert_id: Optional[str] = None
    violated: frozenset = frozenset()
    stats: dict = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def safe(self) -> bool:
        return self.kind == VerdictKind.SAFE


def _path(parents, s, last_step=None, last_state=None):
    states = [s]
    steps = []
    while True:
        prev = parents[s.key()]
        if prev is None:
            break
        ps, st = prev
        steps.append(st)
        states.append(ps)
        s = ps
    states.reverse()
    steps.reverse()
    if last_step is not None:
        steps.append(last_step)
        states.append(last_state)
    return Interleaving(tuple(states), tuple(steps))


def explore(p: Program, bounds: Bounds = Bounds(), stop_on_violation: bool = True,
            ignore_asserts=frozenset(), jobs: int = 1, ghost_init=None) -> Verdict:
    """Breadth-first search of all interleavings up to ``bounds``.

    With ``stop_on_violation`` the first violation in BFS order is reported
    (a minimum-length counterexample); otherwise all violated assertion ids are
    collected in ``Verdict.violated`` and the counterexample is the first found.
    Violations of asserts in ``ignore_asserts`` are counted but do not matter.
    """
    s0 = initial_state(p, ghost_init)
    lay = s0.layout
    parents = {s0.key(): None}
    layer = [s0]
    depth = 0
    stats = {"states": 1, "transitions": 0, "deadlocks": 0, "depth": 0, "ignored_violations": 0}
    violated = set()
    first = None  # (assert_id, interleaving)
    eval_error = None
    bound_hit = False
    pool = _Pool(p, jobs) if jobs > 1 else None
    try:
        while layer:
            if depth >= bounds.max_steps:
                if any(_has_move(lay, s) for s in layer):
                    bound_hit = True
                break
            expanded = pool.expand(layer) if pool else [_expand(lay, s) for s in layer]
            nxt = []
            for s, succ in zip(layer, expanded):
                if isinstance(succ, EvalError):
                    if eval_error is None:
                        eval_error = (succ, _path(parents, s))
                    if stop_on_violation:
                        return _finish(VerdictKind.EVAL_ERROR, stats, eval_error[1], None, violated,
                                       f"evaluation error: {succ.message}")
                    continue
                if not succ and not is_terminal(s):
                    stats["deadlocks"] += 1
                for step, ns, viol in succ:
                    stats["transitions"] += 1
                    relevant = [v for v in viol if v not in ignore_asserts]
                    stats["ignored_violations"] += len(viol) - len(relevant)
                    if relevant:
                        violated.update(relevant)
                        if first is None:
                            first = (relevant[0], _path(parents, s, step, ns))
                            if stop_on_violation:
                                stats["depth"] = depth + 1
                                return _finish(VerdictKind.UNSAFE, stats, first[1], first[0], violated)
                    k = ns.key()
                    if k not in parents:
                        if len(parents) >= bounds.max_states:
                            bound_hit = True
                            continue
                        parents[k] = (s, step)
                        nxt.append(ns)
            stats["states"] = len(parents)
            layer = nxt
            depth += 1
            stats["depth"] = depth
    finally:
        if pool:
            pool.close()
    stats["states"] = len(parents)
    stats["bound_hit"] = bound_hit
    if first is not None:
        return _finish(VerdictKind.UNSAFE, stats, first[1], first[0], violated)
    if eval_error is not None:
        return _finish(VerdictKind.EVAL_ERROR, stats, eval_error[1], None, violated,
                       f"evaluation error: {eval_error[0].message}")
    if bound_hit:
        return _finish(VerdictKind.BOUND_EXCEEDED, stats, None, None, violated)
    return _finish(VerdictKind.SAFE, stats, None, None, violated)


def _finish(kind, stats, cx, aid, violated, error=None):
    return Verdict(kind, cx, aid, frozenset(violated), stats, error)


def _has_move(lay, s):
    try:
        return any(_admissible(lay, s, ts, e) for ts in s.threads for e in lay.out.get(ts.node, ()))
    except EvalError:
        return True


def _expand(lay, s):
    try:
        out = []
        for ti, ts in enumerate(s.threads):
            for e in lay.out.get(ts.node, ()):
                if _admissible(lay, s, ts, e):
                    ns, viol = _apply(lay, s, ti, e)
                    out.append((Step(ts.tid, e), ns, viol))
        return out
    except EvalError as exc:
        return exc


# Parallel expansion: each worker rebuilds the layout once and expands a slice
# of the layer; results are merged back in layer order, so the outcome does not
# depend on the number of workers.

_WORKER_LAYOUT = None


def _worker_init(p):
    global _WORKER_LAYOUT
    _WORKER_LAYOUT = Layout(p)


def _worker_expand(keys):
    lay = _WORKER_LAYOUT
    out = []
    for threads, held, g in keys:
        r = _expand(lay, State(threads, held, g, lay))
        if isinstance(r, EvalError):
            out.append(("error", r.message))
        else:
            out.append([(st, ns.key(), v) for st, ns, v in r])
    return out


class _Pool:
    def __init__(self, p, jobs):
        from concurrent.futures import ProcessPoolExecutor
        self.lay = layout_of(p)
        self.jobs = jobs
        self.ex = ProcessPoolExecutor(max_workers=jobs, initializer=_worker_init, initargs=(p,))

    def expand(self, layer):
        if len(layer) < 64:
            return [_expand(self.lay, s) for s in layer]
        size = -(-len(layer) // self.jobs)
        chunks = [[s.key() for s in layer[i:i + size]] for i in range(0, len(layer), size)]
        results = []
        for part in self.ex.map(_worker_expand, chunks):
            for r in part:
                if isinstance(r, tuple) and r and r[0] == "error":
                    results.append(EvalError(None, r[1]))
                else:
                    results.append([(st, State(*k, self.lay), v) for st, k, v in r])
        return results

    def close(self):
        self.ex.shutdown()


def replay(p: Program, steps, ghost_init=None) -> tuple:
    """Re-run ``steps`` from the initial state; returns ``(Interleaving, violations per step)``."""
    s = initial_state(p, ghost_init)
    states = [s]
    viols = []
    for st in steps:
        s, v = apply_step(s, st.thread, st.edge)
        states.append(s)
        viols.append(v)
    return Interleaving(tuple(states), tuple(steps)), viols


def format_counterexample(i: Interleaving, sm=None) -> str:
    """One line per step: ``<thread-id> <line>:<col> <action-text>``."""
    from .frontend import action_text
    lines = []
    for st in i.steps:
        loc = sm.edge_loc.get(st.edge) if sm is not None else None
        where = f"{loc[0]}:{loc[1]}" if loc else f"n{st.edge.src}"
        lines.append(f"{format_tid(st.thread)} {where} {action_text(st.edge.action)}")
    return "\n".join(lines)


def reachable_states(p: Program, bounds: Bounds = Bounds()):
    """Every reachable state (BFS order); raises if the bounds are hit."""
    s0 = initial_state(p)
    lay = s0.layout
    seen = {s0.key()}
    order = [s0]
    q = deque([(s0, 0)])
    while q:
        s, d = q.popleft()
        succ = _expand(lay, s)
        if isinstance(succ, EvalError):
            continue
        if succ and d >= bounds.max_steps:
            raise RuntimeError("step bound exceeded while sweeping states")
        for _, ns, _ in succ:
            k = ns.key()
            if k not in seen:
                seen.add(k)
                if len(seen) > bounds.max_states:
                    raise RuntimeError("state bound exceeded while sweeping states")
                order.append(ns)
                q.append((ns, d + 1))
    return order
