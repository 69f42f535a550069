"""Ghost witnesses, instrumentation, the split encoding, and witness checking."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

from .core import (
    Assert, Atomic, Const, Edge, GlobalDecl, GlobalRead, GlobalRef, GlobalWrite,
    LocalUpdate, Lock, Program, ThreadTemplate, Unlock, Var, accessed_globals,
    eval_expr, flatten, sub_exprs, substitute, validate_program,
)
from .interleave import (
    Bounds, Interleaving, State, ThreadState, Verdict, VerdictKind, apply_step, explore,
    initial_state, layout_of,
)


class WitnessError(Exception):
    pass


class UnknownLocation(WitnessError):
    pass


class GhostWritesProgramVariable(WitnessError):
    pass


@dataclass(frozen=True)
class GhostDecl:
    name: str
    type: str  # 'int' or 'bool'
    init: object = Const(0)  # expression over program globals


@dataclass(frozen=True)
class Update:
    """``variable = value``; ``value`` may mention any program or ghost variable."""

    variable: str
    value: object


@dataclass
class GhostWitness:
    globals: tuple = ()  # GhostDecl
    locals: dict = field(default_factory=dict)  # ghost local name -> type
    updates: dict = field(default_factory=dict)  # Edge -> tuple[Update, ...]
    invariants: dict = field(default_factory=dict)  # node -> expression

    @property
    def ghost_names(self) -> set:
        return {d.name for d in self.globals}

    def __eq__(self, other):
        if not isinstance(other, GhostWitness):
            return NotImplemented
        return (tuple(self.globals) == tuple(other.globals) and dict(self.locals) == dict(other.locals)
                and {e: tuple(u) for e, u in self.updates.items()} == {e: tuple(u) for e, u in other.updates.items()}
                and dict(self.invariants) == dict(other.invariants))


def check_witness(p: Program, w: GhostWitness) -> None:
    """Raise if ``w`` is not a well-formed witness for ``p``."""
    prog_names = set(p.global_names) | set(p.locals) | set(p.mutexes)
    names = [d.name for d in w.globals] + list(w.locals)
    if len(set(names)) != len(names):
        raise WitnessError("duplicate ghost variable")
    for n in names:
        if n in prog_names:
            raise WitnessError(f"ghost {n} clashes with a program name")
        if n.startswith("__"):
            raise WitnessError(f"ghost name {n} is reserved")
    for d in w.globals:
        if d.type not in ("int", "bool"):
            raise WitnessError(f"ghost {d.name} has unsupported type {d.type}")
        for s in sub_exprs(d.init):
            if isinstance(s, (Var, GlobalRef)) and s.name not in p.global_names:
                raise WitnessError(f"initial value of {d.name} mentions {s.name}, not a program global")
    all_edges = set(p.edges())
    visible = set(p.global_names) | set(p.locals) | set(names)
    ghost = set(names)
    for e, ups in w.updates.items():
        if e not in all_edges:
            raise UnknownLocation(f"update attached to unknown edge {e}")
        if not ups:
            raise WitnessError("empty ghost update sequence")
        for u in ups:
            if u.variable not in ghost:
                if u.variable in prog_names:
                    raise GhostWritesProgramVariable(f"ghost update writes program variable {u.variable}")
                raise WitnessError(f"update of undeclared ghost {u.variable}")
            _check_names(u.value, visible)
    nodes = set(p.node_template)
    for n, inv in w.invariants.items():
        if n not in nodes:
            raise UnknownLocation(f"invariant attached to unknown node {n}")
        _check_names(inv, visible)


def _check_names(e, visible):
    for s in sub_exprs(e):
        if isinstance(s, (Var, GlobalRef)) and s.name not in visible:
            raise WitnessError(f"expression mentions unknown variable {s.name}")


@dataclass
class InstrumentedProgram:
    program: Program
    original: Program
    witness: GhostWitness
    edge_origin: dict  # new edge -> ('original' | 'fused', old edge) or ('check', node)
    node_origin: dict  # new node -> original node
    ghost_globals: frozenset
    ghost_locals: frozenset  # declared ghost locals plus instrumentation temporaries
    witness_asserts: frozenset
    check_edges: dict  # original node -> invariant-check edge
    fused_edges: dict  # original edge -> its image under the edge transformation
    ghost_mutexes: frozenset = frozenset()  # mutexes added by split for ghost globals
    split_mutexes: dict = field(default_factory=dict)  # global -> mutex created by split

    @property
    def original_asserts(self) -> frozenset:
        return frozenset(b.id for e in self.program.edges() for b in flatten(e.action)
                         if isinstance(b, Assert) and b.id not in self.witness_asserts)


def _global_like(name, globals_):
    return name in globals_


def _read_globals(expr, globals_, prefix):
    """Actions reading each global of ``expr`` into a temporary, and the rewritten expression."""
    gs = sorted({s.name for s in sub_exprs(expr) if isinstance(s, (Var, GlobalRef)) and s.name in globals_})
    temps = {g: f"{prefix}{g}" for g in gs}
    reads = tuple(GlobalRead(temps[g], g, GlobalRef(g)) for g in gs)

    def fix(s):
        if isinstance(s, (Var, GlobalRef)) and s.name in temps:
            return Var(temps[s.name])
        return None
    return reads, substitute(expr, fix), set(temps.values())


def _lower_update(u: Update, globals_, ghost_globals):
    reads, e, temps = _read_globals(u.value, globals_, "__upd_")
    if u.variable in ghost_globals:
        return reads + (GlobalWrite(u.variable, e),), temps
    return reads + (LocalUpdate(u.variable, e),), temps


def invariant_assert_id(p: Program, node: int) -> str:
    return f"inv_{node}"


def instrument(p: Program, w: GhostWitness) -> InstrumentedProgram:
    check_witness(p, w)
    ghost_globals = {d.name for d in w.globals}
    all_globals = set(p.global_names) | ghost_globals
    g0 = dict(p.global_init)
    decls = list(p.globals)
    for d in w.globals:
        v = eval_expr(substitute(d.init, lambda s: Const(g0[s.name]) if isinstance(s, (Var, GlobalRef)) else None), {})
        if d.type == "bool":
            v = 1 if v else 0
        g0[d.name] = v
        decls.append(GlobalDecl(d.name, d.type, v))
    temps = set()
    lowered = {}
    for e, ups in w.updates.items():
        acts = []
        for u in ups:
            a, t = _lower_update(u, all_globals, ghost_globals)
            acts.extend(a)
            temps |= t
        lowered[e] = tuple(acts)
    next_id = max(p.node_template, default=-1) + 1
    taken_ids = {b.id for e in p.edges() for b in flatten(e.action) if isinstance(b, Assert)}
    witness_asserts = set()
    edge_origin = {}
    node_origin = {}
    check_edges = {}
    fused_edges = {}
    templates = {}
    for name, t in p.templates.items():
        nodes = set(t.nodes)
        moved = {}  # original node with an invariant -> fresh node taking its out-edges
        new_edges = []
        for n in t.nodes:
            node_origin[n] = n
        for n in sorted(nodes):
            if n in w.invariants:
                fresh = next_id
                next_id += 1
                moved[n] = fresh
                node_origin[fresh] = n
                reads, cond, tmp = _read_globals(w.invariants[n], all_globals, "__inv_")
                temps |= tmp
                aid = invariant_assert_id(p, n)
                while aid in taken_ids:
                    aid += "_"
                taken_ids.add(aid)
                witness_asserts.add(aid)
                act = Atomic(reads + (Assert(cond, aid),)) if reads else Assert(cond, aid)
                ce = Edge(n, act, fresh)
                new_edges.append(ce)
                edge_origin[ce] = ("check", n)
                check_edges[n] = ce
        nodes |= set(moved.values())
        for e in t.edges:
            src = moved.get(e.src, e.src)
            if e in lowered:
                act = Atomic(flatten(e.action) + lowered[e])
                ne = Edge(src, act, e.dst)
                edge_origin[ne] = ("fused", e)
            else:
                ne = Edge(src, e.action, e.dst)
                edge_origin[ne] = ("original", e)
            fused_edges[e] = ne
            new_edges.append(ne)
        templates[name] = ThreadTemplate(name, frozenset(nodes), tuple(new_edges), t.initial)
    ghost_locals = frozenset(set(w.locals) | temps)
    prog = Program(tuple(decls), p.mutexes, frozenset(p.locals | ghost_locals), templates)
    report = validate_program(prog)
    if report:
        raise WitnessError(f"instrumented program is ill-formed: {report[0]}")
    return InstrumentedProgram(prog, p, w, edge_origin, node_origin, frozenset(ghost_globals),
                               ghost_locals, frozenset(witness_asserts), check_edges, fused_edges)


# ---------------------------------------------------------------------------
# Erasure


def erase(ip: InstrumentedProgram) -> Program:
    """Remove everything the witness (and split, for ghosts) added."""
    p = ip.program
    gg, gl, wa = ip.ghost_globals, ip.ghost_locals, ip.witness_asserts
    gm = ip.ghost_mutexes
    created = set(ip.split_mutexes.values())

    def is_ghost(b):
        if isinstance(b, GlobalWrite):
            return b.glob in gg
        if isinstance(b, (LocalUpdate, GlobalRead)):
            return b.target in gl
        if isinstance(b, Assert):
            return b.id in wa
        if isinstance(b, (Lock, Unlock)):
            return b.mutex in gm
        return False

    templates = {}
    for name, t in p.templates.items():
        parent = {n: n for n in t.nodes}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        def union(a, b):
            a, b = find(a), find(b)
            if a != b:
                parent[max(a, b)] = min(a, b)

        kept = []
        for e in t.edges:
            members = flatten(e.action)
            rest = tuple(b for b in members if not is_ghost(b))
            if not rest:
                union(e.src, e.dst)
            elif len(rest) == len(members):
                kept.append(e)
            else:
                kept.append(Edge(e.src, rest[0] if len(rest) == 1 else Atomic(rest), e.dst))
        # Split may leave empty critical sections around erased ghost code.
        changed = True
        while changed:
            changed = False
            edges = [Edge(find(e.src), e.action, find(e.dst)) for e in kept]
            outs, ins = {}, {}
            for e in edges:
                outs.setdefault(e.src, []).append(e)
                ins.setdefault(e.dst, []).append(e)
            for e in edges:
                if isinstance(e.action, Lock) and e.action.mutex in created:
                    nxt = outs.get(e.dst, [])
                    if (len(nxt) == 1 and len(ins.get(e.dst, [])) == 1
                            and isinstance(nxt[0].action, Unlock) and nxt[0].action.mutex == e.action.mutex
                            and len(ins.get(nxt[0].dst, [])) == 1):
                        union(e.src, e.dst)
                        union(e.dst, nxt[0].dst)
                        kept = [k for k in edges if k is not e and k is not nxt[0]]
                        changed = True
                        break
            else:
                kept = edges
        edges = tuple(Edge(find(e.src), e.action, find(e.dst)) for e in kept)
        nodes = frozenset(find(n) for n in t.nodes)
        templates[name] = ThreadTemplate(name, nodes, edges, find(t.initial))
    decls = tuple(d for d in p.globals if d.name not in gg)
    return Program(decls, frozenset(p.mutexes - gm), frozenset(p.locals - gl), templates)


# ---------------------------------------------------------------------------
# Split: atomic blocks and bare global accesses become critical sections


def split_mutex_name(p: Program, g: str) -> str:
    name = f"m_{g}"
    if name in p.mutexes:
        return name
    taken = set(p.global_names) | set(p.locals) | set(p.templates)
    while name in taken:
        name += "_"
    return name


def _split_program(p: Program):
    from .analysis import compute_locksets
    mutex_of = {g: split_mutex_name(p, g) for g in p.global_names}
    created = {g: m for g, m in mutex_of.items() if m not in p.mutexes}
    locksets = compute_locksets(p)
    next_id = max(p.node_template, default=-1) + 1
    origin = {}
    templates = {}
    for name, t in p.templates.items():
        nodes = set(t.nodes)
        edges = []
        for e in t.edges:
            held = locksets.get((name, e.src), frozenset())
            gs = sorted(g for g in accessed_globals(e.action) if mutex_of[g] not in held)
            members = flatten(e.action)
            if not gs and not isinstance(e.action, Atomic):
                edges.append(e)
                origin[e] = e
                continue
            acts = ([Lock(mutex_of[g]) for g in gs] + list(members)
                    + [Unlock(mutex_of[g]) for g in reversed(gs)])
            cur = e.src
            for i, a in enumerate(acts):
                if i == len(acts) - 1:
                    dst = e.dst
                else:
                    dst = next_id
                    next_id += 1
                    nodes.add(dst)
                ne = Edge(cur, a, dst)
                edges.append(ne)
                origin[ne] = e
                cur = dst
        templates[name] = ThreadTemplate(name, frozenset(nodes), tuple(edges), t.initial)
    prog = Program(p.globals, frozenset(set(p.mutexes) | set(created.values())), p.locals, templates)
    return prog, origin, created


def split(p):
    """Encode atomicity with per-global mutexes.

    Accepts a Program (returns a Program) or an InstrumentedProgram (returns an
    InstrumentedProgram whose provenance refers to the split edges).
    """
    if isinstance(p, InstrumentedProgram):
        prog, origin, created = _split_program(p.program)
        edge_origin = {ne: p.edge_origin[old] for ne, old in origin.items()}
        ghost_mutexes = frozenset(m for g, m in created.items() if g in p.ghost_globals)
        return InstrumentedProgram(prog, p.original, p.witness, edge_origin, dict(p.node_origin),
                                   p.ghost_globals, p.ghost_locals, p.witness_asserts, {}, {},
                                   ghost_mutexes, created)
    return _split_program(p)[0]


def lang_mg_violations(p: Program) -> list:
    """Accesses to a global ``g`` not made while holding its mutex ``m_g``."""
    from .analysis import compute_locksets
    locksets = compute_locksets(p)
    bad = []
    for name, t in p.templates.items():
        for e in t.edges:
            if isinstance(e.action, Atomic):
                bad.append((e, "atomic block"))
                continue
            for g in sorted(accessed_globals(e.action)):
                m = f"m_{g}"
                if m not in p.mutexes or m not in locksets.get((name, e.src), frozenset()):
                    bad.append((e, f"access to {g} without holding {m}"))
    return bad


# ---------------------------------------------------------------------------
# Checking witnesses


class WitnessVerdictKind(str, enum.Enum):
    VALID = "VALID"
    INVALID = "INVALID"
    CONFIRMED = "CONFIRMED"
    REJECTED = "REJECTED"
    EVAL_ERROR = "EVAL_ERROR"
    BOUND_EXCEEDED = "BOUND_EXCEEDED"


@dataclass
class WitnessVerdict:
    kind: WitnessVerdictKind
    verdict: Verdict
    origin: Optional[str] = None  # 'original' or 'witness' for a violated assert

    @property
    def ok(self) -> bool:
        return self.kind in (WitnessVerdictKind.VALID, WitnessVerdictKind.CONFIRMED)


def _wrap(v: Verdict, ip: InstrumentedProgram, good, bad) -> WitnessVerdict:
    if v.kind == VerdictKind.SAFE:
        return WitnessVerdict(good, v)
    if v.kind == VerdictKind.UNSAFE:
        origin = "witness" if v.assert_id in ip.witness_asserts else "original"
        return WitnessVerdict(bad, v, origin)
    return WitnessVerdict(WitnessVerdictKind(v.kind.value), v)


def validate_interleaving(p: Program, w: GhostWitness, bounds: Bounds = Bounds(), jobs: int = 1) -> WitnessVerdict:
    ip = instrument(p, w)
    v = explore(ip.program, bounds, jobs=jobs)
    return _wrap(v, ip, WitnessVerdictKind.VALID, WitnessVerdictKind.INVALID)


def validate_local_trace(p: Program, w: GhostWitness, bounds: Bounds = Bounds()) -> WitnessVerdict:
    from .traces import trace_safety
    sp = split(instrument(p, w))
    v = trace_safety(sp.program, bounds)
    return _wrap(v, sp, WitnessVerdictKind.VALID, WitnessVerdictKind.INVALID)


def confirm(p: Program, w: GhostWitness, bounds: Bounds = Bounds(), jobs: int = 1) -> WitnessVerdict:
    """Check only the witness's invariants; assertions of ``p`` are ignored."""
    ip = instrument(p, w)
    v = explore(ip.program, bounds, ignore_asserts=ip.original_asserts, jobs=jobs)
    return _wrap(v, ip, WitnessVerdictKind.CONFIRMED, WitnessVerdictKind.REJECTED)


# ---------------------------------------------------------------------------
# Relating runs of p and of its instrumentation


def lift_interleaving(ip: InstrumentedProgram, i: Interleaving) -> Interleaving:
    """Map a run of the original program to a run of the instrumented one."""
    s = initial_state(ip.program)
    states = [s]
    steps = []
    for st in i.steps:
        ts = s.thread(st.thread)
        if st.edge.src in ip.check_edges and ts.node == st.edge.src:
            ce = ip.check_edges[st.edge.src]
            s, _ = apply_step(s, st.thread, ce)
            steps.append(type(st)(st.thread, ce))
            states.append(s)
        ne = ip.fused_edges[st.edge]
        s, _ = apply_step(s, st.thread, ne)
        steps.append(type(st)(st.thread, ne))
        states.append(s)
    return Interleaving(tuple(states), tuple(steps))


def project_state(ip: InstrumentedProgram, s: State) -> State:
    """Drop ghost variables and map invariant-check positions back."""
    lay_i = s.layout
    lay_p = layout_of(ip.original)
    keep_l = [lay_i.local_names.index(x) for x in lay_p.local_names]
    keep_g = [lay_i.global_names.index(g) for g in lay_p.global_names]
    keep_m = [lay_i.mutex_names.index(m) for m in lay_p.mutex_names]
    threads = tuple(
        ThreadState(t.tid, ip.node_origin.get(t.node, t.node), tuple(t.locals[i] for i in keep_l), t.creates)
        for t in s.threads
    )
    return State(threads, tuple(s.held[i] for i in keep_m), tuple(s.globals[i] for i in keep_g), lay_p)


def project_interleaving(ip: InstrumentedProgram, i: Interleaving) -> Interleaving:
    """Map a run of the instrumented program back to the original program."""
    back = {ne: e for e, ne in ip.fused_edges.items()}
    states = [project_state(ip, i.states[0])]
    steps = []
    for st, s in zip(i.steps, i.states[1:]):
        if st.edge in back:
            steps.append(type(st)(st.thread, back[st.edge]))
            states.append(project_state(ip, s))
    return Interleaving(tuple(states), tuple(steps))


def running_example_witness(p: Program, sm) -> GhostWitness:
    """The hand-written witness for the running example (ghost ``g`` tracks ``m``)."""
    from .frontend import parse_expr
    ups = {}
    for e in p.edges():
        if isinstance(e.action, Lock) and e.action.mutex == "m":
            ups[e] = (Update("g", Const(1)),)
        elif isinstance(e.action, Unlock) and e.action.mutex == "m":
            ups[e] = (Update("g", Const(0)),)
    main = p.templates["main"]
    lock_src = next(e.src for e in main.edges if isinstance(e.action, Lock))
    return GhostWitness(
        globals=(GhostDecl("g", "int", Const(0)),),
        updates=ups,
        invariants={lock_src: parse_expr("g == 0 ==> used == 0")},
    )
