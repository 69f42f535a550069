"""Thread-modular abstract interpretation and witness generation.

The analysis runs on the product of each control-flow graph with a phase flag:
``ST`` while ``main`` has not created any thread yet (globals are tracked
flow-sensitively), ``MT`` afterwards.  In ``MT`` a thread keeps a private copy
of a global ``g`` only while it holds a mutex protecting ``g``; otherwise reads
see every value ever published or written.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .core import (
    Binary, Const, Create, Edge, GlobalRead, GlobalRef, GlobalWrite,
    LocalUpdate, Lock, Neg, Pos, Program, SELF, Unary, Unlock, Var, conj, flatten,
)
from .witness import GhostDecl, GhostWitness, Update

INF = math.inf


# ---------------------------------------------------------------------------
# Intervals


@dataclass(frozen=True)
class Interval:
    lo: float = -INF
    hi: float = INF

    @staticmethod
    def const(c: int) -> "Interval":
        return Interval(c, c)

    @property
    def is_bottom(self) -> bool:
        return self.lo > self.hi

    @property
    def is_top(self) -> bool:
        return self.lo == -INF and self.hi == INF

    def __contains__(self, v) -> bool:
        return isinstance(v, int) and self.lo <= v <= self.hi

    def join(self, o: "Interval") -> "Interval":
        if self.is_bottom:
            return o
        if o.is_bottom:
            return self
        return Interval(min(self.lo, o.lo), max(self.hi, o.hi))

    def meet(self, o: "Interval") -> "Interval":
        r = Interval(max(self.lo, o.lo), min(self.hi, o.hi))
        return BOTTOM if r.is_bottom else r

    def widen(self, o: "Interval") -> "Interval":
        if self.is_bottom:
            return o
        if o.is_bottom:
            return self
        return Interval(self.lo if o.lo >= self.lo else -INF, self.hi if o.hi <= self.hi else INF)

    def leq(self, o: "Interval") -> bool:
        return self.is_bottom or (o.lo <= self.lo and self.hi <= o.hi)

    def __str__(self):
        if self.is_bottom:
            return "bot"
        lo = "-inf" if self.lo == -INF else str(int(self.lo))
        hi = "+inf" if self.hi == INF else str(int(self.hi))
        return f"[{lo},{hi}]"


TOP = Interval()
BOTTOM = Interval(1, 0)
BOOL = Interval(0, 1)


def _mul(a, b):
    if a == 0 or b == 0:
        return 0
    return a * b


def _bool_of(iv: Interval) -> Interval:
    if iv.is_bottom:
        return BOTTOM
    if iv.lo == 0 and iv.hi == 0:
        return Interval(0, 0)
    if iv.lo > 0 or iv.hi < 0:
        return Interval(1, 1)
    return BOOL


def _not(iv: Interval) -> Interval:
    b = _bool_of(iv)
    if b.is_bottom:
        return b
    return Interval(1 - b.hi, 1 - b.lo)


def _div_bound(a, b):
    if a in (INF, -INF):
        return a if b > 0 else -a
    if b in (INF, -INF):
        return 0
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


def interval_eval(e, env: dict, g: Optional[Interval] = None) -> Interval:
    """Abstract evaluation; ``env`` maps locals to intervals (missing means top)."""
    if isinstance(e, Const):
        return Interval.const(e.value)
    if isinstance(e, Var):
        return env.get(e.name, TOP)
    if isinstance(e, GlobalRef):
        return g if g is not None else TOP
    if isinstance(e, Unary):
        v = interval_eval(e.operand, env, g)
        if v.is_bottom:
            return v
        if e.op == "!":
            return _not(v)
        return Interval(-v.hi, -v.lo)
    a = interval_eval(e.left, env, g)
    if e.op in ("&&", "||", "==>"):
        ab = _bool_of(a)
        if ab.is_bottom:
            return ab
        if e.op == "&&" and ab.hi == 0:
            return Interval(0, 0)
        if e.op == "||" and ab.lo == 1:
            return Interval(1, 1)
        if e.op == "==>" and ab.hi == 0:
            return Interval(1, 1)
        bb = _bool_of(interval_eval(e.right, env, g))
        if bb.is_bottom:
            return bb
        if e.op == "&&":
            return bb if ab.lo == 1 else Interval(0, bb.hi)
        if e.op == "||":
            return bb if ab.hi == 0 else Interval(bb.lo, 1)
        return bb if ab.lo == 1 else Interval(bb.lo, 1)
    b = interval_eval(e.right, env, g)
    if a.is_bottom or b.is_bottom:
        return BOTTOM
    op = e.op
    if op == "+":
        return Interval(a.lo + b.lo, a.hi + b.hi)
    if op == "-":
        return Interval(a.lo - b.hi, a.hi - b.lo)
    if op == "*":
        ps = [_mul(x, y) for x in (a.lo, a.hi) for y in (b.lo, b.hi)]
        return Interval(min(ps), max(ps))
    if op == "/":
        if 0 in b or b.lo <= 0 <= b.hi:
            return TOP
        ps = [_div_bound(x, y) for x in (a.lo, a.hi) for y in (b.lo, b.hi)]
        return Interval(min(ps), max(ps))
    if op == "%":
        if b.lo <= 0 <= b.hi:
            return TOP
        m = max(abs(b.lo), abs(b.hi)) - 1
        if a.lo >= 0:
            return Interval(0, min(m, a.hi))
        if a.hi <= 0:
            return Interval(max(-m, a.lo), 0)
        return Interval(-m, m)
    if op in ("==", "!="):
        if a.lo == a.hi == b.lo == b.hi:
            r = Interval(1, 1)
        elif a.hi < b.lo or b.hi < a.lo:
            r = Interval(0, 0)
        else:
            r = BOOL
        return r if op == "==" else _not(r)
    if op == "<":
        return Interval(1, 1) if a.hi < b.lo else Interval(0, 0) if a.lo >= b.hi else BOOL
    if op == "<=":
        return Interval(1, 1) if a.hi <= b.lo else Interval(0, 0) if a.lo > b.hi else BOOL
    if op == ">":
        return Interval(1, 1) if a.lo > b.hi else Interval(0, 0) if a.hi <= b.lo else BOOL
    if op == ">=":
        return Interval(1, 1) if a.lo >= b.hi else Interval(0, 0) if a.hi < b.lo else BOOL
    return TOP


_FLIP = {"<": ">", "<=": ">=", ">": "<", ">=": "<=", "==": "==", "!=": "!="}
_NEGATE = {"<": ">=", "<=": ">", ">": "<=", ">=": "<", "==": "!=", "!=": "=="}


def refine(e, env: dict, truth: bool) -> Optional[dict]:
    """Restrict ``env`` to states where ``e`` evaluates to ``truth``; None if impossible."""
    v = _bool_of(interval_eval(e, env))
    if v.is_bottom or (truth and v.hi == 0) or (not truth and v.lo == 1):
        return None
    if isinstance(e, Unary) and e.op == "!":
        return refine(e.operand, env, not truth)
    if isinstance(e, Binary):
        if (e.op == "&&" and truth) or (e.op == "||" and not truth):
            r = refine(e.left, env, truth)
            return None if r is None else refine(e.right, r, truth)
        if e.op in _FLIP:
            op = e.op if truth else _NEGATE[e.op]
            env = dict(env)
            for var, other, o in ((e.left, e.right, op), (e.right, e.left, _FLIP[op])):
                if isinstance(var, Var) and var.name != SELF:
                    cur = env.get(var.name, TOP)
                    b = interval_eval(other, env)
                    if b.is_bottom:
                        return None
                    lim = {"<": Interval(-INF, b.hi - 1), "<=": Interval(-INF, b.hi),
                           ">": Interval(b.lo + 1, INF), ">=": Interval(b.lo, INF),
                           "==": b, "!=": TOP}[o]
                    if o == "!=" and b.lo == b.hi:
                        if cur.lo == b.lo:
                            lim = Interval(b.lo + 1, INF)
                        elif cur.hi == b.lo:
                            lim = Interval(-INF, b.lo - 1)
                    nv = cur.meet(lim)
                    if nv.is_bottom:
                        return None
                    env[var.name] = nv
            return env
    return env


# ---------------------------------------------------------------------------
# Locksets and protecting mutexes


def _member_locksets(e: Edge, held: frozenset):
    """Lockset before each member of ``e`` and after the last one."""
    out = []
    for b in flatten(e.action):
        out.append(held)
        if isinstance(b, Lock):
            held = held | {b.mutex}
        elif isinstance(b, Unlock):
            held = held - {b.mutex}
    return out, held


def compute_locksets(p: Program) -> dict:
    """Mutexes definitely held at each ``(template, node)``; unreachable nodes get every mutex."""
    res = {}
    allm = frozenset(p.mutexes)
    for name, t in p.templates.items():
        ls = {n: allm for n in t.nodes}
        ls[t.initial] = frozenset()
        reached = {t.initial}
        wl = deque([t.initial])
        while wl:
            u = wl.popleft()
            for e in t.out_edges.get(u, ()):
                _, after = _member_locksets(e, ls[u])
                new = after if e.dst not in reached else ls[e.dst] & after
                if e.dst not in reached or new != ls[e.dst]:
                    reached.add(e.dst)
                    ls[e.dst] = new
                    wl.append(e.dst)
        for n in t.nodes:
            res[(name, n)] = ls[n]
    return res


def _mt_reachable(p: Program) -> set:
    """Syntactically reachable ``(template, node)`` pairs in the multithreaded phase."""
    main = p.templates["main"]
    st = {main.initial}
    mt = set()
    created = set()
    wl = deque([(main.name, main.initial, "ST")])
    seen = {(main.name, main.initial, "ST")}
    while wl:
        name, u, ph = wl.popleft()
        t = p.templates[name]
        for e in t.out_edges.get(u, ()):
            nph = ph
            for b in flatten(e.action):
                if isinstance(b, Create):
                    nph = "MT"
                    if b.template not in created:
                        created.add(b.template)
                        ct = p.templates[b.template]
                        item = (ct.name, ct.initial, "MT")
                        if item not in seen:
                            seen.add(item)
                            wl.append(item)
            item = (name, e.dst, nph)
            if item not in seen:
                seen.add(item)
                wl.append(item)
    for name, u, ph in seen:
        if ph == "MT":
            mt.add((name, u))
        else:
            st.add(u)
    return mt


def infer_protection(p: Program, locksets: Optional[dict] = None) -> dict:
    """M[g]: mutexes held at every multithreaded write of ``g`` (all mutexes if none)."""
    locksets = locksets if locksets is not None else compute_locksets(p)
    mt = _mt_reachable(p)
    prot = {g: frozenset(p.mutexes) for g in p.global_names}
    for name, t in p.templates.items():
        for e in t.edges:
            if (name, e.src) not in mt:
                continue
            before, _ = _member_locksets(e, locksets[(name, e.src)])
            for held, b in zip(before, flatten(e.action)):
                if isinstance(b, GlobalWrite):
                    prot[b.glob] = prot[b.glob] & held
    return prot


# ---------------------------------------------------------------------------
# Abstract states


@dataclass(frozen=True)
class AState:
    locals: tuple  # sorted (name, Interval)
    copies: tuple  # sorted (global, Interval), tracked globals only
    eqs: frozenset  # frozenset of frozenset({a, b}), transitively closed

    @property
    def env(self) -> dict:
        return dict(self.locals)

    @property
    def copy(self) -> dict:
        return dict(self.copies)


def _mk(locals_: dict, copies: dict, eqs) -> AState:
    return AState(tuple(sorted(locals_.items())), tuple(sorted(copies.items())), frozenset(eqs))


def _kill(eqs, x):
    return {q for q in eqs if x not in q}


def _add_eq(eqs, a, b):
    if a == b:
        return set(eqs)
    ca = {a} | {y for q in eqs if a in q for y in q}
    cb = {b} | {y for q in eqs if b in q for y in q}
    cls = ca | cb
    out = set(eqs)
    for x in cls:
        for y in cls:
            if x < y:
                out.add(frozenset((x, y)))
    return out


def _join(a: Optional[AState], b: Optional[AState], widen=False) -> Optional[AState]:
    if a is None:
        return b
    if b is None:
        return a
    la, lb = a.env, b.env
    ca, cb = a.copy, b.copy
    op = (lambda x, y: x.widen(y)) if widen else (lambda x, y: x.join(y))
    locs = {k: op(la[k], lb[k]) for k in la.keys() & lb.keys()}
    cps = {k: op(ca[k], cb[k]) for k in ca.keys() & cb.keys()}
    return _mk(locs, cps, a.eqs & b.eqs)


def _leq(a: Optional[AState], b: Optional[AState]) -> bool:
    if a is None:
        return True
    if b is None:
        return False
    la, lb = a.env, b.env
    ca, cb = a.copy, b.copy
    return (all(k in la and la[k].leq(v) for k, v in lb.items())
            and all(k in ca and ca[k].leq(v) for k, v in cb.items())
            and b.eqs <= a.eqs)


@dataclass
class MutexInvariant:
    box: dict = field(default_factory=dict)  # global -> Interval
    eqs: frozenset = frozenset()  # pairs of globals
    bottom: bool = True

    def join(self, box: dict, eqs) -> "MutexInvariant":
        if self.bottom:
            return MutexInvariant(dict(box), frozenset(eqs), False)
        nb = {g: self.box[g].join(box[g]) for g in self.box}
        return MutexInvariant(nb, self.eqs & frozenset(eqs), False)

    def widen(self, other: "MutexInvariant") -> "MutexInvariant":
        if self.bottom:
            return other
        if other.bottom:
            return self
        return MutexInvariant({g: self.box[g].widen(other.box[g]) for g in self.box}, self.eqs & other.eqs, False)

    def __eq__(self, o):
        return isinstance(o, MutexInvariant) and (self.bottom, self.box, self.eqs) == (o.bottom, o.box, o.eqs)


@dataclass
class _Acc:
    pub: dict  # g -> Interval, published (protected) values
    mtw: dict  # g -> Interval, every multithreaded write
    mm: dict  # m -> MutexInvariant
    entry: dict  # template -> dict of local intervals (or absent)

    def any(self, g) -> Interval:
        return self.pub[g].join(self.mtw[g])

    def key(self):
        return (tuple(sorted(self.pub.items())), tuple(sorted(self.mtw.items())),
                tuple(sorted((m, (v.bottom, tuple(sorted(v.box.items())), v.eqs)) for m, v in self.mm.items())),
                tuple(sorted((t, tuple(sorted(v.items()))) for t, v in self.entry.items())))


@dataclass
class ProtectionResult:
    mode: str
    protecting: dict  # g -> frozenset of mutexes (M[g])
    guarded: dict  # m -> frozenset of globals (G[m])
    protected: dict  # g -> Interval ([g])
    mutex_inv: dict  # m -> MutexInvariant ([m])
    locksets: dict
    node_states: dict  # (template, node, phase) -> AState
    program: Program = None

    def state_at(self, name: str, node: int) -> Optional[AState]:
        out = None
        for ph in ("ST", "MT"):
            out = _join(out, self.node_states.get((name, node, ph)))
        return out

    def report(self) -> str:
        lines = []
        for g in self.program.global_names:
            ms = ",".join(sorted(self.protecting[g]))
            lines.append(f"{g}: M[g]={{{ms}}} [g]={self.protected[g]}")
        for m in sorted(self.program.mutexes):
            gs = ",".join(sorted(self.guarded[m]))
            body = mutex_invariant_expr(self.mutex_inv[m], self.guarded[m])
            from .frontend import print_expr
            lines.append(f"{m}: G[m]={{{gs}}} [m]={print_expr(body) if body is not None else 'true'}")
        return "\n".join(lines)


class _Analyzer:
    def __init__(self, p: Program, mode: str):
        self.p = p
        self.mode = mode
        self.locksets = compute_locksets(p)
        self.prot = infer_protection(p, self.locksets)
        self.guarded = {m: frozenset(g for g in p.global_names if m in self.prot[g]) for m in p.mutexes}
        self.locals = sorted(p.locals - {SELF})
        self.bool_globals = {d.name for d in p.globals if d.type == "bool"}

    def tracked(self, g, held, phase):
        return phase == "ST" or bool(held & self.prot[g])

    def _coerce(self, g, v):
        return _bool_of(v) if g in self.bool_globals else v

    # A transfer through one edge.  ``emit`` collects contributions to the
    # accumulators; it is None while iterating node states.
    def transfer(self, s: AState, name: str, e: Edge, phase: str, acc: _Acc, emit: Optional[_Acc]):
        env = s.env
        cp = s.copy
        eqs = set(s.eqs)
        held = self.locksets[(name, e.src)]
        for b in flatten(e.action):
            if isinstance(b, Lock):
                if phase == "MT":
                    for g in self.p.global_names:
                        if b.mutex in self.prot[g] and not self.tracked(g, held, phase):
                            v = acc.pub[g]
                            if self.mode == "mutexmeet":
                                mi = acc.mm[b.mutex]
                                v = BOTTOM if mi.bottom else v.meet(mi.box[g])
                            if v.is_bottom:
                                return None, phase
                            cp[g] = v
                    if self.mode == "mutexmeet" and not acc.mm[b.mutex].bottom:
                        for q in acc.mm[b.mutex].eqs:
                            x, y = sorted(q)
                            if x in cp and y in cp:
                                eqs = _add_eq(eqs, x, y)
                held = held | {b.mutex}
            elif isinstance(b, Unlock):
                if phase == "MT":
                    if emit is not None:
                        for g in self.p.global_names:
                            if b.mutex in self.prot[g]:
                                emit.pub[g] = emit.pub[g].join(cp.get(g, acc.any(g)))
                        gm = self.guarded[b.mutex]
                        box = {g: cp.get(g, acc.any(g)) for g in gm}
                        es = {q for q in eqs if q <= gm and all(x in cp for x in q)}
                        emit.mm[b.mutex] = emit.mm[b.mutex].join(box, es)
                    held = held - {b.mutex}
                    for g in list(cp):
                        if not self.tracked(g, held, phase):
                            del cp[g]
                            eqs = _kill(eqs, g)
                else:
                    held = held - {b.mutex}
            elif isinstance(b, Create):
                if emit is not None:
                    cur = emit.entry.get(b.template)
                    emit.entry[b.template] = dict(env) if cur is None else {
                        k: cur[k].join(env[k]) for k in cur}
                    if phase == "ST":
                        for g in self.p.global_names:
                            emit.pub[g] = emit.pub[g].join(cp[g])
                        for m, gm in self.guarded.items():
                            box = {g: cp[g] for g in gm}
                            es = {q for q in eqs if q <= gm}
                            emit.mm[m] = emit.mm[m].join(box, es)
                if phase == "ST":
                    phase = "MT"
                    for g in list(cp):
                        if not self.tracked(g, held, phase):
                            del cp[g]
                            eqs = _kill(eqs, g)
            elif isinstance(b, LocalUpdate):
                v = interval_eval(b.expr, env)
                if v.is_bottom:
                    return None, phase
                env[b.target] = v
                eqs = _kill(eqs, b.target)
                if isinstance(b.expr, Var) and b.expr.name != SELF:
                    eqs = _add_eq(eqs, b.target, b.expr.name)
            elif isinstance(b, GlobalRead):
                gv = cp[b.glob] if b.glob in cp else acc.any(b.glob)
                if gv.is_bottom:
                    return None, phase
                v = interval_eval(b.expr, env, gv)
                if v.is_bottom:
                    return None, phase
                env[b.target] = v
                eqs = _kill(eqs, b.target)
                if isinstance(b.expr, GlobalRef) and b.glob in cp:
                    eqs = _add_eq(eqs, b.target, b.glob)
            elif isinstance(b, GlobalWrite):
                v = self._coerce(b.glob, interval_eval(b.expr, env))
                if v.is_bottom:
                    return None, phase
                if phase == "MT" and emit is not None:
                    emit.mtw[b.glob] = emit.mtw[b.glob].join(v)
                if b.glob in cp:
                    cp[b.glob] = v
                    eqs = _kill(eqs, b.glob)
                    if (isinstance(b.expr, Var) and b.expr.name != SELF
                            and b.glob not in self.bool_globals):
                        eqs = _add_eq(eqs, b.glob, b.expr.name)
            elif isinstance(b, (Pos, Neg)):
                r = refine(b.cond, env, isinstance(b, Pos))
                if r is None:
                    return None, phase
                env = r
            # assertions do not change the state
        return _mk(env, cp, eqs), phase

    def node_fixpoint(self, acc: _Acc) -> dict:
        p = self.p
        states = {}
        visits = {}
        wl = deque()
        main = p.templates["main"]
        env0 = {x: Interval.const(0) for x in self.locals}
        cps0 = {d.name: Interval.const(d.init) for d in p.globals}
        entries = {("main", main.initial, "ST"): _mk(env0, cps0, ())}
        for name, t in p.templates.items():
            ent = acc.entry.get(name)
            if ent is not None:
                key = (name, t.initial, "MT")
                entries[key] = _join(entries.get(key), _mk(ent, {}, ()))
        for k, s in entries.items():
            states[k] = s
            wl.append(k)
        while wl:
            k = wl.popleft()
            name, u, ph = k
            t = p.templates[name]
            for e in t.out_edges.get(u, ()):
                ns, nph = self.transfer(states[k], name, e, ph, acc, None)
                if ns is None:
                    continue
                v = (name, e.dst, nph)
                old = states.get(v)
                new = _join(old, ns)
                if old is not None and visits.get(v, 0) >= 3:
                    new = _join(old, new, widen=True)
                if new != old:
                    states[v] = new
                    visits[v] = visits.get(v, 0) + 1
                    wl.append(v)
        # Two descending passes recover bounds lost by widening.
        for _ in range(2):
            incoming = {}
            for k in list(states):
                name, u, ph = k
                for e in p.templates[name].out_edges.get(u, ()):
                    ns, nph = self.transfer(states[k], name, e, ph, acc, None)
                    if ns is not None:
                        v = (name, e.dst, nph)
                        incoming[v] = _join(incoming.get(v), ns)
            for k in list(states):
                new = _join(incoming.get(k), entries.get(k))
                if new is None:
                    del states[k]
                else:
                    states[k] = new
        return states

    def collect(self, states: dict, acc: _Acc) -> _Acc:
        p = self.p
        out = _Acc({g: BOTTOM for g in p.global_names}, {g: BOTTOM for g in p.global_names},
                   {m: MutexInvariant() for m in p.mutexes}, {})
        for (name, u, ph), s in states.items():
            for e in p.templates[name].out_edges.get(u, ()):
                self.transfer(s, name, e, ph, acc, out)
        return out

    def run(self):
        p = self.p
        acc = _Acc({g: BOTTOM for g in p.global_names}, {g: BOTTOM for g in p.global_names},
                   {m: MutexInvariant() for m in p.mutexes}, {})
        for rnd in range(200):
            states = self.node_fixpoint(acc)
            new = self.collect(states, acc)
            merged = _merge_acc(acc, new, widen=rnd >= 3)
            if merged.key() == acc.key():
                break
            acc = merged
        else:  # pragma: no cover - widening guarantees termination well before this
            raise RuntimeError("analysis did not stabilise")
        return acc, states


def _merge_acc(old: _Acc, new: _Acc, widen: bool) -> _Acc:
    def iv(a, b):
        j = a.join(b)
        return a.widen(j) if widen else j
    pub = {g: iv(old.pub[g], new.pub[g]) for g in old.pub}
    mtw = {g: iv(old.mtw[g], new.mtw[g]) for g in old.mtw}
    mm = {}
    for m in old.mm:
        j = old.mm[m] if new.mm[m].bottom else old.mm[m].join(new.mm[m].box, new.mm[m].eqs)
        mm[m] = old.mm[m].widen(j) if widen else j
    entry = {}
    for t in set(old.entry) | set(new.entry):
        a, b = old.entry.get(t), new.entry.get(t)
        if a is None or b is None:
            entry[t] = dict(a or b)
        else:
            entry[t] = {k: iv(a[k], b[k]) for k in a}
    return _Acc(pub, mtw, mm, entry)


def _analyse(p: Program, mode: str) -> ProtectionResult:
    if mode not in ("protection", "mutexmeet"):
        raise ValueError(f"unknown analysis mode {mode}")
    an = _Analyzer(p, mode)
    acc, states = an.run()
    protected = {}
    for g in p.global_names:
        init = Interval.const(p.global_init[g])
        written_mt = not acc.mtw[g].is_bottom
        if written_mt and not an.prot[g]:
            protected[g] = TOP
        elif acc.pub[g].is_bottom:
            protected[g] = init
        else:
            protected[g] = acc.pub[g]
    mutex_inv = {}
    for m in p.mutexes:
        mi = acc.mm[m]
        if mi.bottom:
            mi = MutexInvariant({g: Interval.const(p.global_init[g]) for g in an.guarded[m]}, frozenset(), False)
        mutex_inv[m] = mi
    return ProtectionResult(mode, an.prot, an.guarded, protected, mutex_inv, an.locksets, states, p)


def run_protection_analysis(p: Program) -> ProtectionResult:
    return _analyse(p, "protection")


def run_mutexmeet_analysis(p: Program) -> ProtectionResult:
    return _analyse(p, "mutexmeet")


# ---------------------------------------------------------------------------
# Witness generation


def interval_expr(name: str, iv: Interval):
    """Expression stating ``name`` lies in ``iv``; None when ``iv`` is top."""
    v = Var(name)
    if iv.is_bottom:
        return Const(0)
    if iv.lo == iv.hi:
        return Binary("==", v, Const(int(iv.lo)))
    parts = []
    if iv.lo != -INF:
        parts.append(Binary("<=", Const(int(iv.lo)), v))
    if iv.hi != INF:
        parts.append(Binary("<=", v, Const(int(iv.hi))))
    return conj(parts) if parts else None


def _box_expr(box: dict, eqs) -> Optional[object]:
    parts = []
    for g in sorted(box):
        e = interval_expr(g, box[g])
        if e is not None:
            parts.append(e)
    for q in sorted(tuple(sorted(q)) for q in eqs):
        parts.append(Binary("==", Var(q[0]), Var(q[1])))
    return conj(parts) if parts else None


def mutex_invariant_expr(mi: MutexInvariant, guarded) -> Optional[object]:
    return _box_expr({g: mi.box[g] for g in guarded if g in mi.box}, mi.eqs)


def _fresh(name, taken):
    while name in taken:
        name += "_"
    taken.add(name)
    return name


def generate_witness(p: Program, r: ProtectionResult, mode: Optional[str] = None, ghosts: bool = True) -> GhostWitness:
    mode = mode or r.mode
    if mode != r.mode:
        raise ValueError(f"analysis result is for {r.mode}, not {mode}")
    if not ghosts:
        return _ghost_free_witness(p, r)
    taken = set(p.global_names) | set(p.locals) | set(p.mutexes) | set(p.templates)
    used = sorted({b.mutex for e in p.edges() for b in flatten(e.action) if isinstance(b, (Lock, Unlock))})
    locked = {m: _fresh(f"{m}_locked", taken) for m in used}
    decls = tuple(GhostDecl(locked[m], "int", Const(0)) for m in used)
    updates = {}
    sinks = []
    for e in p.edges():
        first = flatten(e.action)[0]
        if isinstance(first, Lock):
            updates[e] = (Update(locked[first.mutex], Const(1)),)
        elif isinstance(first, Unlock):
            updates[e] = (Update(locked[first.mutex], Const(0)),)
        if any(isinstance(b, Create) for b in flatten(e.action)):
            sinks.append(e.dst)
    # Invariants sit right after creates, where the program is always
    # multithreaded, so only the lock ghosts are needed as guards.

    def free(ms):
        return [Binary("==", Var(locked[m]), Const(0)) for m in sorted(ms) if m in locked]

    clauses = []
    if mode == "mutexmeet":
        for m in sorted(p.mutexes):
            body = mutex_invariant_expr(r.mutex_inv[m], r.guarded[m])
            if body is None:
                continue
            guard = free([m])
            clauses.append(Binary("==>", conj(guard), body) if guard else body)
    else:
        for g in p.global_names:
            body = interval_expr(g, r.protected[g])
            if body is None:
                continue
            guard = free(r.protecting[g])
            clauses.append(Binary("==>", conj(guard), body) if guard else body)
    invariants = {}
    if clauses:
        inv = conj(clauses)
        for n in sinks:
            invariants[n] = inv
    return GhostWitness(decls, {}, updates, invariants)


def _ghost_free_witness(p: Program, r: ProtectionResult) -> GhostWitness:
    invariants = {}
    for name, t in p.templates.items():
        for e in t.edges:
            if not isinstance(flatten(e.action)[0], Lock):
                continue
            v = e.dst
            s = r.state_at(name, v)
            if s is None:
                continue
            held = r.locksets[(name, v)]
            cp = s.copy
            gs = [g for g in p.global_names if held & r.protecting[g] and g in cp]
            box = {g: cp[g] for g in gs}
            eqs = {q for q in s.eqs if q <= set(gs)} if r.mode == "mutexmeet" else set()
            body = _box_expr(box, eqs)
            if body is not None:
                invariants[v] = body
    return GhostWitness((), {}, {}, invariants)
