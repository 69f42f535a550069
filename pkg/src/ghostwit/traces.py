"""Local and global trace semantics for programs whose global accesses are
guarded by per-global mutexes.

A global trace is a DAG of local configurations ``(n, u, l)`` connected by
program order, create order (creator's configuration before the create step to
the child's first configuration) and lock order (configuration after an unlock
to the configuration after the next lock of that mutex; the first lock of a
mutex is ordered after ``main``'s initial configuration).
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .core import (
    Assert, Atomic, Create, GlobalRead, GlobalWrite, LocalUpdate, Lock, Neg, Pos,
    EvalError, Program, Unlock, child_thread_id, compile_expr, format_tid,
)
from .interleave import (
    Bounds, Interleaving, Step, Verdict, VerdictKind, apply_step, initial_state, layout_of,
)


class NotInLangMG(Exception):
    def __init__(self, offending):
        self.offending = offending
        super().__init__("program is not in mutex-per-global form: " +
                         "; ".join(f"{e.src}->{e.dst} {why}" for e, why in offending[:5]))


class NotCreateComplete(Exception):
    pass


@dataclass(frozen=True)
class LocalConfig:
    thread: tuple
    n: int
    node: int
    locals: tuple  # laid out by Layout.local_names


@dataclass
class GlobalTrace:
    program: Program
    events: list = field(default_factory=list)  # LocalConfig
    steps: dict = field(default_factory=dict)  # event idx -> Edge taken to reach it
    creates: list = field(default_factory=list)  # (creator idx before the create, child idx)
    locks: list = field(default_factory=list)  # (mutex, unlock-or-initial idx, lock idx)

    def paths(self) -> dict:
        out = {}
        for i, ev in enumerate(self.events):
            out.setdefault(ev.thread, []).append(i)
        for tid in out:
            out[tid].sort(key=lambda i: self.events[i].n)
        return out

    def threads(self) -> set:
        return {ev.thread for ev in self.events}

    def index(self, tid, n) -> Optional[int]:
        for i, ev in enumerate(self.events):
            if ev.thread == tid and ev.n == n:
                return i
        return None

    def order_edges(self) -> list:
        """All (kind, a, b) edges of the causality relation's generating set."""
        out = []
        for tid, path in self.paths().items():
            for a, b in zip(path, path[1:]):
                out.append(("po", a, b))
        for a, b in self.creates:
            out.append(("create", a, b))
        for m, a, b in self.locks:
            out.append((f"lock({m})", a, b))
        return out

    def ancestors(self) -> Optional[list]:
        """Bitset of causal predecessors (inclusive) per event; None if cyclic."""
        n = len(self.events)
        preds = [[] for _ in range(n)]
        succ = [[] for _ in range(n)]
        for _, a, b in self.order_edges():
            preds[b].append(a)
            succ[a].append(b)
        indeg = [len(p) for p in preds]
        q = deque(i for i in range(n) if indeg[i] == 0)
        order = []
        while q:
            u = q.popleft()
            order.append(u)
            for v in succ[u]:
                indeg[v] -= 1
                if indeg[v] == 0:
                    q.append(v)
        if len(order) != n:
            return None
        anc = [0] * n
        for u in order:
            bits = 1 << u
            for p in preds[u]:
                bits |= anc[p]
            anc[u] = bits
        return anc

    def key(self):
        paths = self.paths()
        threads = tuple(sorted((tid, tuple(self.steps[i] for i in path[1:])) for tid, path in paths.items()))
        chains = {}
        for m, a, b in self.locks:
            chains.setdefault(m, []).append(b)
        chain_key = tuple(sorted(
            (m, tuple(sorted((self.events[b].thread, self.events[b].n) for b in bs)))
            for m, bs in chains.items()))
        return threads, chain_key

    def maximal(self) -> list:
        has_succ = {a for _, a, _ in self.order_edges()}
        return [i for i in range(len(self.events)) if i not in has_succ]

    def restrict(self, idx: int) -> "LocalTrace":
        """The local trace ending in event ``idx`` (its causal past)."""
        anc = self.ancestors()
        keep = [i for i in range(len(self.events)) if anc[idx] >> i & 1]
        ren = {old: new for new, old in enumerate(keep)}
        lt = LocalTrace(self.program, [self.events[i] for i in keep],
                        {ren[i]: e for i, e in self.steps.items() if i in ren},
                        [(ren[a], ren[b]) for a, b in self.creates if a in ren and b in ren],
                        [(m, ren[a], ren[b]) for m, a, b in self.locks if a in ren and b in ren])
        lt.top = ren[idx]
        return lt

    def dump(self, sm=None) -> str:
        lay = layout_of(self.program)
        lines = []
        for i, ev in enumerate(self.events):
            loc = sm.node_loc.get(ev.node) if sm is not None else None
            where = f"{loc[0]}:{loc[1]}" if loc else f"n{ev.node}"
            ls = ", ".join(f"{x}={format_tid(v) if isinstance(v, tuple) else v}"
                           for x, v in zip(lay.local_names, ev.locals))
            lines.append(f"#{i} thread={format_tid(ev.thread)} n={ev.n} node={where} locals={{{ls}}}")
        for kind, a, b in self.order_edges():
            lines.append(f"{kind}: #{a} -> #{b}")
        return "\n".join(lines)


@dataclass
class LocalTrace(GlobalTrace):
    top: int = 0

    @property
    def ego(self):
        return self.events[self.top].thread


@dataclass(frozen=True)
class TraceViolation:
    category: str  # 'Causality Order' | 'Create Order' | 'Lock Order' | 'Reads of Globals' | 'Program Order'
    message: str
    events: tuple = ()

    def __str__(self):
        return f"{self.category}: {self.message}"


def _eval_action_locals(lay, a, locals_, gval=None):
    loc = list(locals_)
    if isinstance(a, LocalUpdate):
        loc[lay.lidx[a.target]] = _ev(lay, a.expr, loc, None)
    elif isinstance(a, GlobalRead):
        loc[lay.lidx[a.target]] = _ev(lay, a.expr, loc, gval)
    return tuple(loc)


def _ev(lay, e, loc, g):
    cache = lay.__dict__.setdefault("_trace_exprs", {})
    f = cache.get(e)
    if f is None:
        f = cache[e] = compile_expr(e, lay.lidx)
    return f(loc, g)


def check_consistency(gt: GlobalTrace, p: Optional[Program] = None) -> list:
    """Independent check of the consistency requirements; empty list means consistent."""
    p = p or gt.program
    lay = layout_of(p)
    out = []

    def bad(cat, msg, *evs):
        out.append(TraceViolation(cat, msg, tuple(evs)))

    evs = gt.events
    if not evs:
        bad("Causality Order", "empty trace")
        return out
    paths = gt.paths()
    # Program order: contiguous step counts, edges of the right template, local effects.
    for tid, path in paths.items():
        ns = [evs[i].n for i in path]
        if ns != list(range(len(ns))):
            bad("Program Order", f"thread {format_tid(tid)} has step counts {ns}", *path)
            continue
        tmpl = p.templates[p.node_template[evs[path[0]].node]] if evs[path[0]].node in p.node_template else None
        if tmpl is None or evs[path[0]].node != tmpl.initial:
            bad("Program Order", f"thread {format_tid(tid)} does not start at a template's initial node", path[0])
            continue
        held = set()
        for a, b in zip(path, path[1:]):
            e = gt.steps.get(b)
            ea, eb = evs[a], evs[b]
            if e is None or e not in set(tmpl.out_edges.get(ea.node, ())) or e.dst != eb.node:
                bad("Program Order", f"no edge of {tmpl.name} leads from #{a} to #{b}", a, b)
                continue
            act = e.action
            if isinstance(act, Atomic):
                bad("Program Order", "atomic blocks are not part of this semantics", a, b)
                continue
            if isinstance(act, (Pos, Neg)):
                v = _ev(lay, act.cond, ea.locals, None)
                if (v != 0) != isinstance(act, Pos):
                    bad("Program Order", f"guard at #{a} does not hold", a, b)
            if isinstance(act, Lock):
                held.add(act.mutex)
            if isinstance(act, Unlock):
                if act.mutex not in held:
                    bad("Program Order", f"thread unlocks {act.mutex} without holding it", b)
                held.discard(act.mutex)
            if not isinstance(act, GlobalRead):
                try:
                    exp = _eval_action_locals(lay, act, ea.locals)
                except Exception as exc:  # evaluation error
                    bad("Program Order", f"evaluation error at #{a}: {exc}", a)
                    continue
                if exp != eb.locals:
                    bad("Program Order", f"local state of #{b} does not follow from #{a}", a, b)
    # Causality order.
    anc = gt.ancestors()
    if anc is None:
        bad("Causality Order", "order relation has a cycle")
        return out
    roots = [i for i in range(len(evs)) if anc[i] == 1 << i]
    if len(roots) != 1:
        bad("Causality Order", f"{len(roots)} minimal events", *roots)
    elif evs[roots[0]].thread != () or evs[roots[0]].n != 0:
        bad("Causality Order", "least event is not main's initial configuration", roots[0])
    root = roots[0] if len(roots) == 1 else None
    # Create order.
    into = {}
    for a, b in gt.creates:
        into.setdefault(b, []).append(a)
    from_ = {}
    for a, b in gt.creates:
        from_.setdefault(a, []).append(b)
    for tid, path in paths.items():
        c0 = path[0]
        srcs = into.get(c0, [])
        if tid == ():
            if srcs:
                bad("Create Order", "initial thread has a creator", c0)
            if lay.program.templates["main"].initial != evs[c0].node:
                bad("Create Order", "initial thread does not run main", c0)
            elif evs[c0].locals != initial_state(p).threads[0].locals:
                bad("Create Order", "initial thread's local state is not the initial one", c0)
            continue
        if len(srcs) != 1:
            bad("Create Order", f"thread {format_tid(tid)} is created {len(srcs)} times", c0, *srcs)
            continue
        a = srcs[0]
        ca = evs[a]
        k = sum(1 for i in paths[ca.thread] if evs[i].n <= ca.n and i in gt.steps
                and isinstance(gt.steps[i].action, Create))
        if tid != child_thread_id(ca.thread, k):
            bad("Create Order", f"thread {format_tid(tid)} cannot be the child of #{a}", a, c0)
            continue
        cedges = [e for e in p.template_of(ca.node).out_edges.get(ca.node, ())
                  if isinstance(e.action, Create) and p.templates[e.action.template].initial == evs[c0].node]
        if not cedges:
            bad("Create Order", f"#{a} cannot create a thread starting at #{c0}", a, c0)
            continue
        nxt = gt.index(ca.thread, ca.n + 1)
        if nxt is not None and not isinstance(gt.steps[nxt].action, Create):
            bad("Create Order", f"#{a} is followed by a step other than the create", a, nxt)
        expect = list(ca.locals)
        expect[0] = tid
        if tuple(expect) != evs[c0].locals:
            bad("Create Order", f"initial local state of {format_tid(tid)} differs from its creator's", a, c0)
    for a, bs in from_.items():
        if len(bs) > 1:
            bad("Create Order", f"#{a} creates {len(bs)} threads", a, *bs)
    # Lock order.
    lock_ev = {}
    unlock_ev = {}
    for i, e in gt.steps.items():
        if isinstance(e.action, Lock):
            lock_ev.setdefault(e.action.mutex, set()).add(i)
        elif isinstance(e.action, Unlock):
            unlock_ev.setdefault(e.action.mutex, set()).add(i)
    pred = {}
    succ = {}
    for m, a, b in gt.locks:
        if b not in lock_ev.get(m, ()):
            bad("Lock Order", f"lock({m}) edge ends at #{b}, which is not a lock of {m}", a, b)
            continue
        if a not in unlock_ev.get(m, ()) and a != root:
            bad("Lock Order", f"lock({m}) edge starts at #{a}, which is neither an unlock of {m} nor the least event", a, b)
        pred.setdefault((m, b), []).append(a)
        succ.setdefault((m, a), []).append(b)
    for m, ls in lock_ev.items():
        for b in ls:
            ps = pred.get((m, b), [])
            if len(ps) != 1:
                bad("Lock Order", f"lock of {m} at #{b} has {len(ps)} predecessors", b, *ps)
    for (m, a), bs in succ.items():
        if len(bs) > 1:
            bad("Lock Order", f"#{a} is followed by {len(bs)} locks of {m}", a, *bs)
    # Reads of globals.
    writes = {}
    for i, e in gt.steps.items():
        if isinstance(e.action, GlobalWrite):
            writes.setdefault(e.action.glob, []).append(i)
    for i, e in gt.steps.items():
        if not isinstance(e.action, GlobalRead):
            continue
        ev = evs[i]
        pre = gt.index(ev.thread, ev.n - 1)
        if pre is None:
            continue
        g = e.action.glob
        cands = [w for w in writes.get(g, []) if anc[pre] >> w & 1]
        last = [w for w in cands if not any(w2 != w and anc[w2] >> w & 1 for w2 in cands)]
        if len(last) > 1:
            bad("Reads of Globals", f"read of {g} at #{i} has {len(last)} unordered last writes", i, *last)
            continue
        if last:
            w = last[0]
            wpre = gt.index(evs[w].thread, evs[w].n - 1)
            val = _ev(lay, gt.steps[w].action.expr, evs[wpre].locals, None)
            if lay.gidx[g] in lay.bool_globals:
                val = 1 if val != 0 else 0
        else:
            val = p.global_init[g]
        exp = _eval_action_locals(lay, e.action, evs[pre].locals, val)
        if exp != ev.locals:
            bad("Reads of Globals", f"read of {g} at #{i} does not return the last written value {val}", pre, i)
    return out


def is_create_complete(gt: GlobalTrace) -> bool:
    paths = gt.paths()
    evs = gt.events
    children = {b: a for a, b in gt.creates}
    for tid, path in paths.items():
        if tid == ():
            continue
        a = children.get(path[0])
        if a is None:
            return False
        nxt = gt.index(evs[a].thread, evs[a].n + 1)
        if nxt is None or not isinstance(gt.steps[nxt].action, Create):
            return False
    threads = set(paths)
    for tid, path in paths.items():
        k = 0
        for i in path[1:]:
            if isinstance(gt.steps[i].action, Create):
                if child_thread_id(tid, k) not in threads:
                    return False
                k += 1
    return True


# ---------------------------------------------------------------------------
# Interleavings <-> global traces


def interleaving_to_global_trace(i: Interleaving, p: Optional[Program] = None) -> GlobalTrace:
    s0 = i.states[0]
    p = p or s0.layout.program
    gt = GlobalTrace(p)
    last = {}
    count = {}

    def add(tid, s, edge=None):
        ts = s.thread(tid)
        n = count.get(tid, -1) + 1
        count[tid] = n
        gt.events.append(LocalConfig(tid, n, ts.node, ts.locals))
        idx = len(gt.events) - 1
        if edge is not None:
            gt.steps[idx] = edge
        last[tid] = idx
        return idx

    root = add((), s0)
    tail = {}  # mutex -> last unlock event (or None before the first lock)
    for st, s in zip(i.steps, i.states[1:]):
        t = st.thread
        pre = last[t]
        idx = add(t, s, st.edge)
        act = st.edge.action
        if isinstance(act, Create):
            ts = s.thread(t)
            child = child_thread_id(t, ts.creates - 1)
            c0 = add(child, s)
            gt.creates.append((pre, c0))
        elif isinstance(act, Lock):
            src = tail.get(act.mutex, root)
            gt.locks.append((act.mutex, src, idx))
        elif isinstance(act, Unlock):
            tail[act.mutex] = idx
        elif isinstance(act, Atomic):
            raise ValueError("atomic blocks have no trace semantics; split the program first")
    return gt


def global_trace_to_interleaving(gt: GlobalTrace) -> Interleaving:
    if not is_create_complete(gt):
        raise NotCreateComplete("global trace is not create-complete")
    p = gt.program
    evs = gt.events
    n = len(evs)
    succ = [[] for _ in range(n)]
    indeg = [0] * n
    edges = [(a, b) for _, a, b in gt.order_edges()]
    # The child starts after the creator's create step.
    for a, b in gt.creates:
        nxt = gt.index(evs[a].thread, evs[a].n + 1)
        edges.append((nxt, b))
    for a, b in edges:
        succ[a].append(b)
        indeg[b] += 1
    heap = [(evs[i].thread, evs[i].n, i) for i in range(n) if indeg[i] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        _, _, u = heapq.heappop(heap)
        order.append(u)
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(heap, (evs[v].thread, evs[v].n, v))
    if len(order) != n:
        raise ValueError("global trace is cyclic")
    s = initial_state(p)
    states = [s]
    steps = []
    for u in order:
        ev = evs[u]
        if ev.n == 0:
            continue
        st = Step(ev.thread, gt.steps[u])
        s, _ = apply_step(s, st.thread, st.edge)
        states.append(s)
        steps.append(st)
    return Interleaving(tuple(states), tuple(steps))


def _interleaving_paths(i: Interleaving) -> dict:
    out = {}
    s0 = i.states[0]
    for ts in s0.threads:
        out[ts.tid] = [(0, ts.node, ts.locals)], []
    for st, s in zip(i.steps, i.states[1:]):
        for ts in s.threads:
            if ts.tid not in out:
                out[ts.tid] = [(0, ts.node, ts.locals)], []
        confs, edges = out[st.thread]
        ts = s.thread(st.thread)
        confs.append((len(confs), ts.node, ts.locals))
        edges.append(st.edge)
    return out


def coincides(i: Interleaving, gt: GlobalTrace) -> bool:
    ip = _interleaving_paths(i)
    last = i.states[-1]
    if {t.tid for t in last.threads} != gt.threads():
        return False
    gp = gt.paths()
    for tid, (confs, edges) in ip.items():
        path = gp.get(tid)
        if path is None:
            return False
        gconfs = [(gt.events[j].n, gt.events[j].node, gt.events[j].locals) for j in path]
        gedges = [gt.steps[j] for j in path[1:]]
        if gconfs != confs or gedges != edges:
            return False
    return True


# ---------------------------------------------------------------------------
# Enumeration
#
# The frontier of a partially built trace determines every possible extension:
# for each thread its node, locals, create count and view (last write of every
# global in its causal past); children whose creating configuration exists but
# which have not started; and for each mutex the end of its lock chain.  Write
# versions are totally ordered per global (all writes happen under m_g), so
# views compare versions and the frontier keeps only their relative order.


class _Frontier:
    __slots__ = ("threads", "pending", "tails", "last", "pref", "tref", "counts")

    def __init__(self, threads, pending, tails, last=None, pref=None, tref=None, counts=None):
        self.threads = threads  # tid -> (node, locals, creates, view)
        self.pending = pending  # child tid -> (node, locals, view)
        self.tails = tails  # per mutex: ('init', view) | ('held', tid) | ('unl', view)
        self.last = last  # tid -> last event idx (trace building only)
        self.pref = pref  # child tid -> creator event idx
        self.tref = tref  # per mutex: event idx of the chain end
        self.counts = counts  # tid -> n of last event

    def key(self):
        ng = None
        views = [v for (_, _, _, v) in self.threads.values()] + [v for (_, _, v) in self.pending.values()]
        views += [t[1] for t in self.tails if t[0] != "held"]
        if views:
            ng = len(views[0])
            ranks = []
            for g in range(ng):
                vs = sorted({v[g][0] for v in views})
                ranks.append({x: r for r, x in enumerate(vs)})

            def norm(v):
                return tuple((ranks[g][v[g][0]], v[g][1]) for g in range(ng))
        else:
            def norm(v):
                return v
        th = tuple(sorted((tid, node, loc, c, norm(v)) for tid, (node, loc, c, v) in self.threads.items()))
        pe = tuple(sorted((tid, node, loc, norm(v)) for tid, (node, loc, v) in self.pending.items()))
        ta = tuple(t if t[0] == "held" else (t[0], norm(t[1])) for t in self.tails)
        return th, pe, ta


class _Engine:
    def __init__(self, p: Program):
        bad = _lang_mg_check(p)
        if bad:
            raise NotInLangMG(bad)
        self.p = p
        self.lay = layout_of(p)
        self.ng = len(self.lay.global_names)
        self.create_of = {}
        for e in p.edges():
            outs = p.template_of(e.src).out_edges.get(e.src, ())
            if len(outs) == 1 and isinstance(e.action, Create):
                self.create_of[e.src] = p.templates[e.action.template].initial

    def initial(self, build: bool):
        s0 = initial_state(self.p)
        ts = s0.threads[0]
        view = tuple((0, v) for v in s0.globals)
        f = _Frontier({(): (ts.node, ts.locals, 0, view)}, {},
                      tuple(("init", view) for _ in self.lay.mutex_names))
        if build:
            f.last, f.pref, f.tref, f.counts = {(): 0}, {}, [0] * len(self.lay.mutex_names), {(): 0}
        self._register(f, ())
        gt = None
        if build:
            gt = GlobalTrace(self.p, [LocalConfig((), 0, ts.node, ts.locals)])
        return f, gt

    def _register(self, f, tid):
        node, loc, c, view = f.threads[tid]
        if node in self.create_of:
            child = child_thread_id(tid, c)
            if child not in f.threads and child not in f.pending:
                cl = list(loc)
                cl[0] = child
                f.pending[child] = (self.create_of[node], tuple(cl), view)
                if f.pref is not None:
                    f.pref[child] = f.last[tid]

    def moves(self, f: _Frontier):
        """Yield ``(move, new_frontier, info)``; ``info`` describes the added event."""
        lay = self.lay
        build = f.last is not None
        for tid in sorted(f.threads):
            node, loc, c, view = f.threads[tid]
            for e in lay.out.get(node, ()):
                a = e.action
                viol = ()
                nview = view
                nloc = loc
                nc = c
                tails = f.tails
                info = {"edge": e, "thread": tid}
                if isinstance(a, Lock):
                    mi = lay.midx[a.mutex]
                    t = tails[mi]
                    if t[0] == "held":
                        continue
                    nview = tuple(x if x[0] >= y[0] else y for x, y in zip(view, t[1]))
                    tails = tails[:mi] + (("held", tid),) + tails[mi + 1:]
                    info["lock"] = (a.mutex, mi)
                elif isinstance(a, Unlock):
                    mi = lay.midx[a.mutex]
                    if tails[mi] != ("held", tid):
                        continue
                    tails = tails[:mi] + (("unl", view),) + tails[mi + 1:]
                    info["unlock"] = mi
                elif isinstance(a, (Pos, Neg)):
                    v = lay.guards[e][1](loc, None)
                    if isinstance(v, tuple):
                        raise EvalError(None, "thread id used as a boolean")
                    if (v != 0) != isinstance(a, Pos):
                        continue
                elif isinstance(a, LocalUpdate):
                    nloc = _eval_action_locals(lay, a, loc)
                elif isinstance(a, GlobalRead):
                    nloc = _eval_action_locals(lay, a, loc, view[lay.gidx[a.glob]][1])
                elif isinstance(a, GlobalWrite):
                    gi = lay.gidx[a.glob]
                    val = _ev(lay, a.expr, loc, None)
                    if isinstance(val, tuple):
                        raise EvalError(None, "thread id stored in a global")
                    if gi in lay.bool_globals:
                        val = 1 if val != 0 else 0
                    top = max([v[gi][0] for (_, _, _, v) in f.threads.values()]
                              + [v[gi][0] for (_, _, v) in f.pending.values()]
                              + [t[1][gi][0] for t in tails if t[0] != "held"])
                    nview = view[:gi] + ((top + 1, val),) + view[gi + 1:]
                elif isinstance(a, Assert):
                    v = _ev(lay, a.cond, loc, None)
                    if isinstance(v, tuple):
                        raise EvalError(None, "thread id used as a boolean")
                    if v == 0:
                        viol = (a.id,)
                elif isinstance(a, Create):
                    child = child_thread_id(tid, c)
                    if child not in f.threads and child not in f.pending:
                        info["spawn_pending"] = child
                    nc = c + 1
                threads = dict(f.threads)
                threads[tid] = (e.dst, nloc, nc, nview)
                nf = _Frontier(threads, dict(f.pending), tails)
                if build:
                    nf.last, nf.pref, nf.tref, nf.counts = dict(f.last), dict(f.pref), list(f.tref), dict(f.counts)
                    info["pre"] = f.last[tid]
                    nf.counts[tid] = f.counts[tid] + 1
                    info["config"] = LocalConfig(tid, nf.counts[tid], e.dst, nloc)
                if "spawn_pending" in info:
                    # Creates at nodes with other out-edges make the child available only now.
                    ch = info["spawn_pending"]
                    cl = list(loc)
                    cl[0] = ch
                    nf.pending[ch] = (self.p.templates[a.template].initial, tuple(cl), view)
                    if build:
                        nf.pref[ch] = f.last[tid]
                info["violations"] = viol
                yield ("step", tid, e), nf, info
        for child in sorted(f.pending):
            node, loc, view = f.pending[child]
            threads = dict(f.threads)
            threads[child] = (node, loc, 0, view)
            pending = dict(f.pending)
            del pending[child]
            nf = _Frontier(threads, pending, f.tails)
            info = {"thread": child, "violations": ()}
            if build:
                nf.last, nf.pref, nf.tref, nf.counts = dict(f.last), dict(f.pref), list(f.tref), dict(f.counts)
                nf.counts[child] = 0
                info["config"] = LocalConfig(child, 0, node, loc)
                info["creator"] = f.pref[child]
            yield ("spawn", child), nf, info

    def commit(self, nf: _Frontier, gt: Optional[GlobalTrace], move, info):
        """Finish a move: register new pending children, and extend ``gt`` if building."""
        tid = info["thread"]
        if gt is not None:
            gt = GlobalTrace(gt.program, list(gt.events), dict(gt.steps), list(gt.creates), list(gt.locks))
            idx = len(gt.events)
            gt.events.append(info["config"])
            nf.last[tid] = idx
            if move[0] == "step":
                gt.steps[idx] = info["edge"]
                if "lock" in info:
                    m, mi = info["lock"]
                    gt.locks.append((m, nf.tref[mi], idx))
                if "unlock" in info:
                    nf.tref[info["unlock"]] = idx
            else:
                gt.creates.append((info["creator"], idx))
        self._register(nf, tid)
        return gt


def _lang_mg_check(p: Program) -> list:
    from .witness import lang_mg_violations
    return lang_mg_violations(p)


def enumerate_global_traces(p: Program, max_events: int):
    """Yield every consistent global trace with at most ``max_events`` events, once each."""
    eng = _Engine(p)
    f, gt = eng.initial(build=True)
    seen = {gt.key()}
    layer = [(f, gt)]
    yield gt
    size = 1
    while layer and size < max_events:
        nxt = []
        for f, gt in layer:
            for move, nf, info in eng.moves(f):
                ngt = eng.commit(nf, gt, move, info)
                k = ngt.key()
                if k in seen:
                    continue
                seen.add(k)
                nxt.append((nf, ngt))
                yield ngt
        layer = nxt
        size += 1


def trace_safety(p: Program, bounds: Bounds = Bounds(), stop_on_violation: bool = True) -> Verdict:
    """Search for a local trace violating an assertion.

    Partial traces with equal frontiers have identical extensions, so the search
    visits each frontier once, breadth-first by number of events.  A violation
    is reported with the local trace ending at the failing assertion.
    """
    eng = _Engine(p)
    try:
        return _trace_search(eng, bounds, stop_on_violation)
    except EvalError as exc:
        return Verdict(VerdictKind.EVAL_ERROR, None, None, frozenset(), {}, str(exc))


def _trace_search(eng, bounds, stop_on_violation):
    f0, _ = eng.initial(build=False)
    parents = {f0.key(): None}
    layer = [f0]
    size = 1
    violated = set()
    first = None
    bound_hit = False
    stats = {"frontiers": 1, "extensions": 0}
    while layer:
        if size >= bounds.max_events:
            if any(True for f in layer for _ in eng.moves(f)):
                bound_hit = True
            break
        nxt = []
        for f in layer:
            for move, nf, info in eng.moves(f):
                stats["extensions"] += 1
                eng.commit(nf, None, move, info)
                if info["violations"]:
                    violated.update(info["violations"])
                    if first is None:
                        first = (info["violations"][0], f.key(), move)
                        if stop_on_violation:
                            break
                k = nf.key()
                if k in parents:
                    continue
                if len(parents) >= bounds.max_states:
                    bound_hit = True
                    continue
                parents[k] = (f.key(), move)
                nxt.append(nf)
            if first is not None and stop_on_violation:
                break
        if first is not None and stop_on_violation:
            break
        layer = nxt
        size += 1
    stats["frontiers"] = len(parents)
    stats["bound_hit"] = bound_hit
    if first is not None:
        lt = _rebuild(eng, parents, first[1], first[2])
        return Verdict(VerdictKind.UNSAFE, lt, first[0], frozenset(violated), stats)
    if bound_hit:
        return Verdict(VerdictKind.BOUND_EXCEEDED, None, None, frozenset(), stats)
    return Verdict(VerdictKind.SAFE, None, None, frozenset(), stats)


def _rebuild(eng, parents, key, last_move) -> LocalTrace:
    moves = [last_move]
    while parents[key] is not None:
        key, mv = parents[key]
        moves.append(mv)
    moves.reverse()
    f, gt = eng.initial(build=True)
    for mv in moves:
        for move, nf, info in eng.moves(f):
            if move == mv:
                gt = eng.commit(nf, gt, move, info)
                f = nf
                break
        else:  # pragma: no cover - moves are replayed from the search itself
            raise RuntimeError("could not replay trace construction")
    return gt.restrict(len(gt.events) - 1)
