"""Random loop-free programs and witnesses for differential testing."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Optional

from .core import Binary, Const, Program, Var, conj
from .frontend import SourceMap, parse_program


@dataclass
class CorpusConfig:
    max_templates: int = 3
    max_edges: int = 6  # per template
    max_globals: int = 2
    max_mutexes: int = 2
    atomic: bool = False  # allow atomic blocks
    locks: bool = True
    max_threads: int = 3


@dataclass
class Sample:
    source: str
    program: Program
    sm: SourceMap
    seed: int


class _Gen:
    def __init__(self, rng: random.Random, cfg: CorpusConfig):
        self.rng = rng
        self.cfg = cfg
        self.globals = [f"g{i}" for i in range(rng.randint(1, cfg.max_globals))]
        self.mutexes = [f"m{i}" for i in range(rng.randint(1, cfg.max_mutexes))] if cfg.locks else []
        self.locals = ["x", "y"]
        n = rng.randint(1, cfg.max_templates)
        self.templates = ["main"] + [f"t{i}" for i in range(1, n)]
        self.threads = 1

    def const(self, hi=2):
        return str(self.rng.randint(0, hi))

    def local_expr(self):
        r = self.rng.random()
        x = self.rng.choice(self.locals)
        if r < 0.3:
            return self.const()
        if r < 0.6:
            return x
        return f"{x} {self.rng.choice(['+', '-'])} {self.rng.randint(1, 2)}"

    def cond(self):
        x = self.rng.choice(self.locals)
        op = self.rng.choice(["==", "!=", "<=", "<"])
        return f"{x} {op} {self.const()}"

    def simple(self, atomic=False):
        """One single-edge statement."""
        r = self.rng.random()
        g = self.rng.choice(self.globals)
        x = self.rng.choice(self.locals)
        if r < 0.3:
            e = g if self.rng.random() < 0.6 else f"{g} + {self.rng.randint(1, 2)}"
            return f"{x} = {e};"
        if r < 0.6:
            return f"{g} = {self.local_expr()};"
        if r < 0.75 or atomic:
            return f"{x} = {self.local_expr()};"
        return f"assert({self.cond()});"

    def block(self, budget, tidx, depth=0):
        """Statements using at most ``budget`` edges; returns ``(lines, used)``."""
        out = []
        used = 0
        rng = self.rng
        while used < budget:
            left = budget - used
            r = rng.random()
            later = self.templates[tidx + 1:]
            if later and r < 0.2 and self.threads < self.cfg.max_threads:
                self.threads += 1
                out.append(f"create({rng.choice(later)});")
                used += 1
            elif self.mutexes and r < 0.45 and left >= 3:
                m = rng.choice(self.mutexes)
                inner, k = self.block(min(left - 2, 2), tidx, depth + 1) if depth < 1 else ([self.simple()], 1)
                if not inner:
                    inner, k = [self.simple()], 1
                out += [f"lock({m});"] + ["  " + s for s in inner] + [f"unlock({m});"]
                used += k + 2
            elif self.cfg.atomic and r < 0.6 and left >= 1:
                body = [self.simple(atomic=True) for _ in range(rng.randint(1, 3))]
                out.append("atomic { " + " ".join(body) + " }")
                used += 1
            elif depth < 1 and r < 0.7 and left >= 3:
                a, ka = self.block(max(1, (left - 2) // 2), tidx, depth + 1)
                b, kb = self.block(max(1, left - 2 - ka), tidx, depth + 1) if rng.random() < 0.6 else ([], 0)
                if not a:
                    a, ka = [self.simple()], 1
                out.append(f"if ({self.cond()}) {{")
                out += ["  " + s for s in a]
                if b:
                    out.append("} else {")
                    out += ["  " + s for s in b]
                out.append("}")
                used += ka + kb + 2
            else:
                out.append(self.simple())
                used += 1
            if rng.random() < 0.15:
                break
        return out, used

    def program(self) -> str:
        rng = self.rng
        lines = []
        for g in self.globals:
            lines.append(f"global {g}: int = {rng.randint(0, 1)};")
        for m in self.mutexes:
            lines.append(f"mutex {m};")
        for x in self.locals:
            lines.append(f"local {x};")
        bodies = {}
        for i, t in enumerate(self.templates):
            body, _ = self.block(rng.randint(1, self.cfg.max_edges), i)
            if i + 1 < len(self.templates) and not any(s.startswith("create(") for s in body):
                # make sure the next template is reachable from somewhere
                if self.threads < self.cfg.max_threads:
                    self.threads += 1
                    body.insert(rng.randint(0, len(body)), f"create({self.templates[i + 1]});")
            bodies[t] = body
        for t in self.templates:
            lines.append(f"thread {t} {{")
            lines += ["  " + s for s in bodies[t]]
            lines.append("}")
        return "\n".join(lines) + "\n"


def random_program_text(rng: random.Random, cfg: Optional[CorpusConfig] = None) -> str:
    return _Gen(rng, cfg or CorpusConfig()).program()


def random_program(seed: int, cfg: Optional[CorpusConfig] = None) -> Sample:
    rng = random.Random(seed)
    text = random_program_text(rng, cfg)
    p, sm = parse_program(text)
    return Sample(text, p, sm, seed)


def corpus(seed: int, count: int, cfg: Optional[CorpusConfig] = None):
    """``count`` programs drawn deterministically from ``seed``."""
    master = random.Random(seed)
    for _ in range(count):
        yield random_program(master.randrange(2 ** 32), cfg)


def lang_mg_corpus(seed: int, count: int, cfg: Optional[CorpusConfig] = None):
    """Programs in mutex-per-global form, obtained by splitting random programs."""
    from .witness import split
    for s in corpus(seed, count, cfg):
        yield s, split(s.program)


# ---------------------------------------------------------------------------
# Witnesses


def emittable_nodes(p: Program, sm: SourceMap) -> list:
    return sorted(n for n in p.node_template if n in sm.node_loc and min(sm.nodes_at(sm.node_loc[n])) == n)


def emittable_edges(p: Program, sm: SourceMap) -> list:
    from .format import updatable
    out = []
    for e in p.edges():
        loc = sm.edge_loc.get(e)
        if loc is not None and updatable(e) and [x for x in sm.edges_at(loc) if updatable(x)] == [e]:
            out.append(e)
    return sorted(out, key=lambda e: sm.edge_loc[e])


def _atom(rng, names, hi=2):
    v = rng.choice(names)
    return Binary(rng.choice(["==", "<=", "!=", ">="]), Var(v), Const(rng.randint(0, hi)))


def random_witness(rng: random.Random, p: Program, sm: SourceMap, base=None):
    """A random witness, optionally extending ``base`` (e.g. a generated one)
    with extra ghosts, updates and possibly false invariants."""
    from .witness import GhostDecl, GhostWitness, Update
    taken = set(p.global_names) | set(p.locals) | set(p.mutexes) | set(p.templates)
    decls = list(base.globals) if base else []
    updates = dict(base.updates) if base else {}
    invariants = dict(base.invariants) if base else {}
    taken |= {d.name for d in decls}
    ghosts = []
    for i in range(rng.randint(0, 2)):
        name = f"gh{i}"
        while name in taken:
            name += "_"
        taken.add(name)
        init = Const(rng.randint(0, 1)) if rng.random() < 0.7 else Var(rng.choice(p.global_names))
        decls.append(GhostDecl(name, rng.choice(["int", "int", "bool"]), init))
        ghosts.append(name)
    edges = emittable_edges(p, sm)
    if ghosts and edges:
        for e in rng.sample(edges, rng.randint(1, min(3, len(edges)))):
            gname = rng.choice(ghosts)
            r = rng.random()
            if r < 0.4:
                val = Const(rng.randint(0, 2))
            elif r < 0.7:
                val = Binary("+", Var(gname), Const(1))
            elif r < 0.85:
                val = Var(rng.choice(p.global_names))
            else:
                val = Var(rng.choice(sorted(p.locals - {"self"})))
            updates[e] = updates.get(e, ()) + (Update(gname, val),)
    nodes = emittable_nodes(p, sm)
    names = list(p.global_names) + ghosts + [x for x in sorted(p.locals) if x != "self"]
    for n in rng.sample(nodes, min(len(nodes), rng.randint(0, 2))):
        inv = _atom(rng, names)
        if rng.random() < 0.3:
            inv = Binary("==>", _atom(rng, names), inv)
        if rng.random() < 0.3:
            inv = conj([inv, _atom(rng, names)])
        invariants[n] = conj([invariants[n], inv]) if n in invariants and rng.random() < 0.5 else inv
    return GhostWitness(tuple(decls), {}, updates, invariants)
