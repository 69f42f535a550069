"""Textual DSL for programs (``.cw`` files): parser and printer.

Grammar (``#`` starts a line comment)::

    program  := decl* template+
    decl     := "global" id ":" type "=" int ";" | "mutex" id ";" | "local" id ";"
    template := "thread" id "{" stmt* "}"
    stmt     := "lock" "(" id ")" ";" | "unlock" "(" id ")" ";" | "create" "(" id ")" ";"
              | id "=" expr ";" | "assert" ["[" id "]"] "(" expr ")" ";"
              | "assume" "(" expr ")" ";"
              | "if" "(" expr ")" "{" stmt* "}" ["else" "{" stmt* "}"]
              | "while" "(" expr ")" "{" stmt* "}" | "atomic" "{" simple+ "}"
              | id ":" | "goto" id ";"

Locals are implicitly declared by being assigned anywhere; ``local x;`` declares
one that is only read.  Labels and ``goto`` exist so that every control-flow
graph produced by the transformations can be printed and read back.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .core import (
    Assert, Atomic, Binary, Const, Create, Edge, GlobalDecl, GlobalRead, GlobalRef,
    GlobalWrite, LocalUpdate, Lock, Neg, Pos, Program, SELF, ThreadTemplate, Unary,
    Unlock, Var, expr_globals, flatten, sub_exprs, validate_program,
)


class ParseError(Exception):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{line}:{column}: {message}")
        self.message = message
        self.line = line
        self.column = column


class RenderError(Exception):
    pass


Loc = tuple  # (line, column), both 1-based


@dataclass
class SourceMap:
    node_loc: dict = field(default_factory=dict)
    edge_loc: dict = field(default_factory=dict)

    def nodes_at(self, loc: Loc) -> list:
        return [n for n, l in self.node_loc.items() if l == tuple(loc)]

    def edges_at(self, loc: Loc) -> list:
        return [e for e, l in self.edge_loc.items() if l == tuple(loc)]


# ---------------------------------------------------------------------------
# Lexer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>\#[^\n]*)
  | (?P<int>\d+)
  | (?P<id>[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z0-9_]+)*)
  | (?P<op>==>|==|!=|<=|>=|&&|\|\||[-+*/%<>!=(){};:\[\],])
    """,
    re.VERBOSE,
)

KEYWORDS = {
    "global", "mutex", "local", "thread", "lock", "unlock", "create", "assert",
    "assume", "if", "else", "while", "atomic", "goto", "int", "bool",
}


@dataclass(frozen=True)
class Token:
    kind: str  # 'int', 'id', 'kw', 'op', 'eof'
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    toks = []
    pos = 0
    line, col = 1, 1
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        s = m.group()
        if kind not in ("ws", "comment"):
            if kind == "id" and s in KEYWORDS:
                kind = "kw"
            toks.append(Token(kind, s, line, col))
        nl = s.count("\n")
        if nl:
            line += nl
            col = len(s) - s.rfind("\n")
        else:
            col += len(s)
        pos = m.end()
    toks.append(Token("eof", "", line, col))
    return toks


# ---------------------------------------------------------------------------
# Expressions


@dataclass(frozen=True)
class _Paren:
    inner: object


PREC = {"==>": 1, "||": 2, "&&": 3, "==": 4, "!=": 4, "<": 5, "<=": 5, ">": 5, ">=": 5,
        "+": 6, "-": 6, "*": 7, "/": 7, "%": 7}


class _ExprParser:
    def __init__(self, toks, i=0):
        self.toks = toks
        self.i = i

    def peek(self):
        return self.toks[self.i]

    def next(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text):
        t = self.next()
        if t.text != text or t.kind not in ("op", "kw"):
            raise ParseError(f"expected {text!r}, found {t.text or 'end of input'!r}", t.line, t.col)
        return t

    def expr(self, min_prec=1):
        left = self.unary()
        while True:
            t = self.peek()
            if t.kind != "op" or t.text not in PREC:
                return left
            p = PREC[t.text]
            if p < min_prec:
                return left
            self.next()
            if t.text == "==>":
                right = self.expr(p)  # right associative
            else:
                right = self.expr(p + 1)
            left = Binary(t.text, left, right)

    def unary(self):
        t = self.peek()
        if t.kind == "op" and t.text in ("!", "-"):
            self.next()
            nt = self.peek()
            if t.text == "-" and nt.kind == "int":
                self.next()
                return Const(-int(nt.text))
            return Unary(t.text, self.unary())
        return self.primary()

    def primary(self):
        t = self.next()
        if t.kind == "int":
            return Const(int(t.text))
        if t.kind == "id":
            return Var(t.text)
        if t.kind == "op" and t.text == "(":
            e = self.expr()
            self.expect(")")
            return _Paren(e)
        raise ParseError(f"expected expression, found {t.text or 'end of input'!r}", t.line, t.col)


def _strip(e, recover_implications=False):
    if isinstance(e, _Paren):
        return _strip(e.inner, recover_implications)
    if isinstance(e, Unary):
        return Unary(e.op, _strip(e.operand, recover_implications))
    if isinstance(e, Binary):
        if (recover_implications and e.op == "||" and isinstance(e.left, Unary)
                and e.left.op == "!" and isinstance(e.left.operand, _Paren)
                and isinstance(e.right, _Paren)):
            return Binary("==>", _strip(e.left.operand, True), _strip(e.right, True))
        return Binary(e.op, _strip(e.left, recover_implications), _strip(e.right, recover_implications))
    return e


def parse_expr(text: str, recover_implications: bool = False):
    """Parse a standalone expression; identifiers come back as ``Var``."""
    toks = tokenize(text)
    p = _ExprParser(toks)
    e = p.expr()
    t = p.peek()
    if t.kind != "eof":
        raise ParseError(f"unexpected {t.text!r} after expression", t.line, t.col)
    return _strip(e, recover_implications)


def _atom(e) -> bool:
    return isinstance(e, (Var, GlobalRef)) or (isinstance(e, Const) and e.value >= 0)


def _prec(e, c_mode):
    if isinstance(e, Binary):
        if e.op == "==>" and c_mode:
            return PREC["||"]
        return PREC[e.op]
    if isinstance(e, Const) and e.value < 0:
        return 8
    if isinstance(e, Unary):
        return 8
    return 9


def print_expr(e, c_mode: bool = False) -> str:
    """Print with minimal parentheses.

    ``c_mode`` spells implications as ``!(A) || (B)``; :func:`parse_expr` with
    ``recover_implications`` reads that spelling back as an implication.
    """
    if isinstance(e, Const):
        return str(e.value)
    if isinstance(e, (Var, GlobalRef)):
        return e.name
    if isinstance(e, Unary):
        inner = print_expr(e.operand, c_mode)
        # a bare "-3" would read back as a literal
        bare = _atom(e.operand) and not (e.op == "-" and isinstance(e.operand, Const))
        return e.op + (inner if bare else f"({inner})")
    if e.op == "==>" and c_mode:
        return f"!({print_expr(e.left, True)}) || ({print_expr(e.right, True)})"
    p = _prec(e, c_mode)
    if e.op == "==>":
        lp, rp = _prec(e.left, c_mode) <= p, _prec(e.right, c_mode) < p
    else:
        lp, rp = _prec(e.left, c_mode) < p, _prec(e.right, c_mode) <= p
    ls = print_expr(e.left, c_mode)
    rs = print_expr(e.right, c_mode)
    if lp:
        ls = f"({ls})"
    if rp:
        rs = f"({rs})"
    # Keep plain disjunctions from being mistaken for the implication spelling.
    if (c_mode and e.op == "||" and rp and isinstance(e.left, Unary) and e.left.op == "!"
            and not _atom(e.left.operand)):
        ls = f"({ls})"
    return f"{ls} {e.op} {rs}"


def expr_type(e, where=None) -> str:
    """'int', 'bool' or 'tid'; raises TypeError on a mismatch."""
    if isinstance(e, Const) or isinstance(e, GlobalRef):
        return "int"
    if isinstance(e, Var):
        return "tid" if e.name == SELF else "int"
    if isinstance(e, Unary):
        t = expr_type(e.operand)
        if e.op == "-" and t != "int":
            raise TypeError(f"{t} used as integer in {print_expr(e)}")
        if e.op == "!" and t == "tid":
            raise TypeError(f"thread id used as boolean in {print_expr(e)}")
        return "int" if e.op == "-" else "bool"
    a, b = expr_type(e.left), expr_type(e.right)
    if e.op in ("+", "-", "*", "/", "%", "<", "<=", ">", ">="):
        for t in (a, b):
            if t != "int":
                raise TypeError(f"{t} used as integer in {print_expr(e)}")
        return "int" if e.op in ("+", "-", "*", "/", "%") else "bool"
    if e.op in ("==", "!="):
        if (a == "tid") != (b == "tid"):
            raise TypeError(f"thread id compared with a number in {print_expr(e)}")
        return "bool"
    for t in (a, b):
        if t == "tid":
            raise TypeError(f"thread id used as boolean in {print_expr(e)}")
    return "bool"


# ---------------------------------------------------------------------------
# Statement syntax tree


@dataclass
class _Stmt:
    kind: str
    line: int
    col: int
    args: tuple = ()
    body: list = field(default_factory=list)
    orelse: list = field(default_factory=list)


SIMPLE = {"lock", "unlock", "create", "assign", "assert", "assume"}


class _Parser(_ExprParser):
    def error(self, msg, t=None):
        t = t or self.peek()
        raise ParseError(msg, t.line, t.col)

    def ident(self, what="identifier"):
        t = self.next()
        if t.kind != "id":
            self.error(f"expected {what}, found {t.text or 'end of input'!r}", t)
        return t

    def program(self):
        decls = []
        templates = []
        if self.peek().kind == "eof":
            self.error("expected program")
        while self.peek().kind == "kw" and self.peek().text in ("global", "mutex", "local"):
            decls.append(self.decl())
        if self.peek().text != "thread":
            self.error("expected 'thread'")
        while self.peek().text == "thread" and self.peek().kind == "kw":
            templates.append(self.template())
        t = self.peek()
        if t.kind != "eof":
            self.error(f"unexpected {t.text!r}")
        return decls, templates

    def decl(self):
        kw = self.next()
        name = self.ident()
        if kw.text == "global":
            self.expect(":")
            ty = self.next()
            if ty.text not in ("int", "bool"):
                self.error("expected type 'int' or 'bool'", ty)
            self.expect("=")
            neg = False
            if self.peek().text == "-":
                self.next()
                neg = True
            v = self.next()
            if v.kind != "int":
                self.error("expected integer initial value", v)
            val = -int(v.text) if neg else int(v.text)
            if ty.text == "bool" and val not in (0, 1):
                self.error("boolean initialised outside 0/1", v)
            self.expect(";")
            return ("global", name, ty.text, val)
        self.expect(";")
        return (kw.text, name)

    def template(self):
        self.expect("thread")
        name = self.ident("template name")
        open_ = self.expect("{")
        body = self.block_body()
        close = self.expect("}")
        return name, body, (open_.line, open_.col), (close.line, close.col)

    def block_body(self):
        out = []
        while self.peek().text != "}" and self.peek().kind != "eof":
            out.append(self.stmt())
        return out

    def braced(self):
        self.expect("{")
        body = self.block_body()
        self.expect("}")
        return body

    def cond(self):
        self.expect("(")
        e = _strip(self.expr())
        self.expect(")")
        return e

    def stmt(self):
        t = self.peek()
        if t.kind == "kw":
            if t.text in ("lock", "unlock", "create"):
                self.next()
                self.expect("(")
                arg = self.ident()
                self.expect(")")
                self.expect(";")
                return _Stmt(t.text, t.line, t.col, (arg,))
            if t.text == "assert":
                self.next()
                aid = None
                if self.peek().text == "[":
                    self.next()
                    aid = self.ident("assertion id").text
                    self.expect("]")
                e = self.cond()
                self.expect(";")
                return _Stmt("assert", t.line, t.col, (e, aid))
            if t.text == "assume":
                self.next()
                e = self.cond()
                self.expect(";")
                return _Stmt("assume", t.line, t.col, (e,))
            if t.text == "if":
                self.next()
                e = self.cond()
                body = self.braced()
                orelse = []
                if self.peek().text == "else" and self.peek().kind == "kw":
                    self.next()
                    orelse = self.braced()
                return _Stmt("if", t.line, t.col, (e,), body, orelse)
            if t.text == "while":
                self.next()
                e = self.cond()
                body = self.braced()
                return _Stmt("while", t.line, t.col, (e,), body)
            if t.text == "atomic":
                self.next()
                body = self.braced()
                if not body:
                    self.error("empty atomic block", t)
                for s in body:
                    if s.kind not in SIMPLE:
                        raise ParseError(f"{s.kind} not allowed inside atomic", s.line, s.col)
                return _Stmt("atomic", t.line, t.col, (), body)
            if t.text == "goto":
                self.next()
                lab = self.ident("label")
                self.expect(";")
                return _Stmt("goto", t.line, t.col, (lab.text,))
            self.error(f"unexpected keyword {t.text!r}")
        if t.kind == "id":
            self.next()
            if self.peek().text == ":":
                self.next()
                return _Stmt("label", t.line, t.col, (t.text,))
            self.expect("=")
            e = _strip(self.expr())
            self.expect(";")
            return _Stmt("assign", t.line, t.col, (t, e))
        self.error(f"expected statement, found {t.text or 'end of input'!r}")


# ---------------------------------------------------------------------------
# Lowering to control-flow graphs


class _UF:
    def __init__(self):
        self.parent = {}

    def add(self, x):
        self.parent[x] = x

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        a, b = self.find(a), self.find(b)
        if a != b:
            lo, hi = min(a, b), max(a, b)
            self.parent[hi] = lo
        return self.find(a)


class _Lowering:
    def __init__(self, globals_, mutexes, templates, locals_):
        self.globals = globals_
        self.mutexes = mutexes
        self.templates = templates
        self.locals = locals_
        self.uf = _UF()
        self.counter = 0

    def fresh(self):
        n = self.counter
        self.counter += 1
        self.uf.add(n)
        return n

    # -- expressions
    def resolve(self, e, line, col, allow_globals):
        def fix(s):
            if isinstance(s, Var):
                if s.name in self.globals:
                    if not allow_globals:
                        raise ParseError(f"global {s.name} may only be read by an assignment to a local", line, col)
                    return GlobalRef(s.name)
                if s.name in self.mutexes:
                    raise ParseError(f"mutex {s.name} used as a value", line, col)
                if s.name not in self.locals:
                    raise ParseError(f"undeclared identifier {s.name}", line, col)
            return None
        from .core import substitute
        out = substitute(e, fix)
        try:
            expr_type(out)
        except TypeError as exc:
            raise ParseError(f"type mismatch: {exc}", line, col) from None
        return out

    def action(self, s, tname, counter):
        line, col = s.line, s.col
        if s.kind in ("lock", "unlock"):
            m = s.args[0]
            if m.text not in self.mutexes:
                raise ParseError(f"undeclared mutex {m.text}", m.line, m.col)
            return (Lock if s.kind == "lock" else Unlock)(m.text)
        if s.kind == "create":
            t = s.args[0]
            if t.text not in self.templates:
                raise ParseError(f"unknown template {t.text}", t.line, t.col)
            return Create(t.text)
        if s.kind == "assume":
            return Pos(self.resolve(s.args[0], line, col, False))
        if s.kind == "assert":
            counter[0] += 1
            aid = s.args[1] or f"{tname}.{counter[0]}"
            return Assert(self.resolve(s.args[0], line, col, False), aid)
        if s.kind == "assign":
            tok, e = s.args
            target = tok.text
            if target == SELF:
                raise ParseError("self is read-only", tok.line, tok.col)
            if target in self.mutexes:
                raise ParseError(f"cannot assign to mutex {target}", tok.line, tok.col)
            if target in self.globals:
                return GlobalWrite(target, self.resolve(e, line, col, False))
            r = self.resolve(e, line, col, True)
            gs = expr_globals(r)
            if len(gs) > 1:
                raise ParseError("an assignment may read at most one global", line, col)
            if gs:
                return GlobalRead(target, gs.pop(), r)
            return LocalUpdate(target, r)
        raise AssertionError(s.kind)

    def template(self, name, body, open_loc, close_loc):
        self.edges = []  # (src, action, dst, loc)
        self.node_loc = {}
        self.labels = {}
        self.defined = set()
        self.counter_asserts = [0]
        self.tname = name
        init = self.fresh()
        exit_ = self.block(body, init)
        if exit_ is not None:
            self.node_loc.setdefault(exit_, close_loc)
        for lab, node in self.labels.items():
            if lab not in self.defined:
                raise ParseError(f"undefined label {lab}", *self.label_use[lab])
        find = self.uf.find
        edges = [(find(a), act, find(b), loc) for a, act, b, loc in self.edges]
        init = find(init)
        if any(b == init for _, _, b, _ in edges):
            # Loops and labels may not re-enter the initial node: add an entry step.
            new_init = self.fresh()
            edges.insert(0, (new_init, Pos(Const(1)), init, open_loc))
            self.node_loc[new_init] = open_loc
            init = new_init
        nodes = {init}
        for a, _, b, _ in edges:
            nodes.add(a)
            nodes.add(b)
        node_loc = {}
        for n, loc in sorted(self.node_loc.items(), key=lambda kv: kv[1]):
            node_loc.setdefault(find(n), loc)
        for n in nodes:
            node_loc.setdefault(n, close_loc)
        return init, nodes, edges, node_loc

    def block(self, stmts, cur):
        for s in stmts:
            if s.kind == "label":
                lab = s.args[0]
                if lab in self.defined:
                    raise ParseError(f"duplicate label {lab}", s.line, s.col)
                self.defined.add(lab)
                node = self.label_node(lab, s)
                cur = node if cur is None else self.uf.union(cur, node)
                continue
            if cur is None:
                raise ParseError("unreachable statement", s.line, s.col)
            self.node_loc.setdefault(cur, (s.line, s.col))
            if s.kind in SIMPLE:
                nxt = self.fresh()
                self.edges.append((cur, self.action(s, self.tname, self.counter_asserts), nxt, (s.line, s.col)))
                cur = nxt
            elif s.kind == "atomic":
                acts = tuple(self.action(b, self.tname, self.counter_asserts) for b in s.body)
                nxt = self.fresh()
                self.edges.append((cur, Atomic(acts), nxt, (s.line, s.col)))
                cur = nxt
            elif s.kind == "goto":
                self.uf.union(cur, self.label_node(s.args[0], s))
                cur = None
            elif s.kind == "if":
                c = self.resolve(s.args[0], s.line, s.col, False)
                if not s.body and not s.orelse:
                    raise ParseError("if statement with both branches empty", s.line, s.col)
                t0, e0 = self.fresh(), self.fresh()
                self.edges.append((cur, Pos(c), t0, (s.line, s.col)))
                self.edges.append((cur, Neg(c), e0, (s.line, s.col)))
                te = self.block(s.body, t0)
                ee = self.block(s.orelse, e0)
                if te is None:
                    cur = ee
                elif ee is None:
                    cur = te
                else:
                    cur = self.uf.union(te, ee)
            elif s.kind == "while":
                c = self.resolve(s.args[0], s.line, s.col, False)
                head = cur
                b0, out = self.fresh(), self.fresh()
                self.edges.append((head, Pos(c), b0, (s.line, s.col)))
                self.edges.append((head, Neg(c), out, (s.line, s.col)))
                be = self.block(s.body, b0)
                if be is not None:
                    self.uf.union(be, head)
                cur = out
            else:
                raise AssertionError(s.kind)
        return cur

    def label_node(self, lab, s):
        if not hasattr(self, "label_use"):
            self.label_use = {}
        self.label_use.setdefault(lab, (s.line, s.col))
        if lab not in self.labels:
            self.labels[lab] = self.fresh()
        return self.labels[lab]


def _collect_assigned(stmts, out):
    for s in stmts:
        if s.kind == "assign":
            out.add(s.args[0].text)
        _collect_assigned(s.body, out)
        _collect_assigned(s.orelse, out)


def parse_program(text: str):
    """Parse DSL text into ``(Program, SourceMap)``; raises :class:`ParseError`."""
    parser = _Parser(tokenize(text))
    decls, templates = parser.program()
    globals_ = []
    mutexes = []
    declared_locals = set()
    seen = {}
    for d in decls:
        name = d[1]
        if name.text in seen:
            raise ParseError(f"duplicate declaration of {name.text}", name.line, name.col)
        seen[name.text] = d[0]
        if d[0] == "global":
            globals_.append(GlobalDecl(name.text, d[2], d[3]))
        elif d[0] == "mutex":
            mutexes.append(name.text)
        else:
            declared_locals.add(name.text)
    tnames = {}
    for name, _, _, _ in templates:
        if name.text in tnames:
            raise ParseError(f"duplicate template {name.text}", name.line, name.col)
        tnames[name.text] = name
    if "main" not in tnames:
        t = templates[0][0]
        raise ParseError("no main template", t.line, t.col)
    gset = {g.name for g in globals_}
    assigned = set(declared_locals)
    for _, body, _, _ in templates:
        _collect_assigned(body, assigned)
    locals_ = {x for x in assigned if x not in gset and x not in mutexes} | {SELF}
    low = _Lowering(gset, set(mutexes), set(tnames), locals_)
    sm = SourceMap()
    tmpl = {}
    for name, body, open_loc, close_loc in templates:
        init, nodes, edges, node_loc = low.template(name.text, body, open_loc, close_loc)
        es = []
        for a, act, b, loc in edges:
            e = Edge(a, act, b)
            es.append(e)
            sm.edge_loc[e] = loc
        sm.node_loc.update(node_loc)
        tmpl[name.text] = ThreadTemplate(name.text, frozenset(nodes), tuple(es), init)
    # Renumber nodes densely, in order of first appearance.
    order = {}
    for t in tmpl.values():
        for n in [t.initial] + [x for e in t.edges for x in (e.src, e.dst)] + sorted(t.nodes):
            order.setdefault(n, len(order))
    new_tmpl = {}
    new_sm = SourceMap()
    for name, t in tmpl.items():
        es = []
        for e in t.edges:
            ne = Edge(order[e.src], e.action, order[e.dst])
            es.append(ne)
            new_sm.edge_loc[ne] = sm.edge_loc[e]
        for n in t.nodes:
            new_sm.node_loc[order[n]] = sm.node_loc[n]
        new_tmpl[name] = ThreadTemplate(name, frozenset(order[n] for n in t.nodes), tuple(es), order[t.initial])
    prog = Program(tuple(globals_), frozenset(mutexes), frozenset(locals_), new_tmpl)
    report = validate_program(prog)
    if report:
        v = report[0]
        loc = (1, 1)
        for e, l in new_sm.edge_loc.items():
            if f"{e.src}->{e.dst}" in v.location:
                loc = l
                break
        raise ParseError(str(v.rule), *loc)
    return prog, new_sm


# ---------------------------------------------------------------------------
# Printing


def _simple(a, count, tname) -> str:
    if isinstance(a, Lock):
        return f"lock({a.mutex});"
    if isinstance(a, Unlock):
        return f"unlock({a.mutex});"
    if isinstance(a, Create):
        return f"create({a.template});"
    if isinstance(a, LocalUpdate):
        return f"{a.target} = {print_expr(a.expr)};"
    if isinstance(a, GlobalRead):
        return f"{a.target} = {print_expr(a.expr)};"
    if isinstance(a, GlobalWrite):
        return f"{a.glob} = {print_expr(a.expr)};"
    if isinstance(a, Assert):
        count[0] += 1
        tag = "" if a.id == f"{tname}.{count[0]}" else f"[{a.id}]"
        return f"assert{tag}({print_expr(a.cond)});"
    if isinstance(a, Pos):
        return f"assume({print_expr(a.cond)});"
    raise RenderError(f"action {a!r} has no statement form")


def action_text(a) -> str:
    """One-line text of an action (used in counterexamples and dumps)."""
    if isinstance(a, Atomic):
        return "atomic { " + " ".join(_simple(b, [0], "") for b in a.actions) + " }"
    if isinstance(a, Neg):
        return f"assume(!({print_expr(a.cond)}));"
    return _simple(a, [0], "")


class _Renderer:
    def __init__(self, t: ThreadTemplate):
        self.t = t

    def run(self):
        terminals = [n for n in self._reachable() if not self.t.out_edges.get(n)]
        if len(terminals) > 1:
            raise RenderError(f"template {self.t.name} has several exit nodes")
        self.targets = set()
        self.dry = True
        self.emitted = set()
        self.chain(self.t.initial, [], 1)
        self.labels = {}
        self.dry = False
        self.emitted = set()
        self.count = [0]
        out = []
        self.chain(self.t.initial, out, 1)
        return out

    def _reachable(self):
        seen = {self.t.initial}
        stack = [self.t.initial]
        while stack:
            u = stack.pop()
            for e in self.t.out_edges.get(u, ()):
                if e.dst not in seen:
                    seen.add(e.dst)
                    stack.append(e.dst)
        return seen

    def label(self, u):
        if u not in self.labels:
            self.labels[u] = f"L{len(self.labels) + 1}"
        return self.labels[u]

    def chain(self, u, out, depth):
        pad = "  " * depth
        while True:
            if u in self.emitted:
                if self.dry:
                    self.targets.add(u)
                else:
                    out.append(f"{pad}goto {self.label(u)};")
                return
            self.emitted.add(u)
            if not self.dry and u in self.targets:
                out.append(f"{'  ' * (depth - 1)} {self.label(u)}:")
            es = self.t.out_edges.get(u, ())
            if not es:
                return
            if len(es) == 1:
                e = es[0]
                if not self.dry:
                    out.append(pad + self.stmt(e.action))
                u = e.dst
                continue
            pos = [e for e in es if isinstance(e.action, Pos)]
            neg = [e for e in es if isinstance(e.action, Neg)]
            if len(es) != 2 or len(pos) != 1 or len(neg) != 1 or pos[0].action.cond != neg[0].action.cond:
                raise RenderError(f"node {u} of {self.t.name} branches in a way the DSL cannot express")
            if not self.dry:
                out.append(f"{pad}if ({print_expr(pos[0].action.cond)}) {{")
            self.chain(pos[0].dst, out, depth + 1)
            if not self.dry:
                out.append(f"{pad}}} else {{")
            self.chain(neg[0].dst, out, depth + 1)
            if not self.dry:
                out.append(f"{pad}}}")
            return

    def stmt(self, a):
        if isinstance(a, Atomic):
            parts = []
            for b in a.actions:
                if isinstance(b, (Neg, Atomic)):
                    raise RenderError("atomic block member has no statement form")
                parts.append(_simple(b, self.count, self.t.name))
            return "atomic { " + " ".join(parts) + " }"
        if isinstance(a, Neg):
            raise RenderError("lone negative guard has no statement form")
        return _simple(a, self.count, self.t.name)


def render_program(p: Program) -> str:
    lines = []
    for d in p.globals:
        lines.append(f"global {d.name}: {d.type} = {d.init};")
    for m in sorted(p.mutexes):
        lines.append(f"mutex {m};")
    written = set()
    for e in p.edges():
        for b in flatten(e.action):
            if isinstance(b, (LocalUpdate, GlobalRead)):
                written.add(b.target)
    for x in sorted(p.locals - written - {SELF}):
        lines.append(f"local {x};")
    if lines:
        lines.append("")
    names = list(p.templates)
    if "main" in names:
        names.remove("main")
        names.insert(0, "main")
    for name in names:
        body = _Renderer(p.templates[name]).run()
        lines.append(f"thread {name} {{")
        lines.extend(body)
        lines.append("}")
    return "\n".join(lines) + "\n"


def expr_uses(e) -> set:
    return {s.name for s in sub_exprs(e) if isinstance(s, (Var, GlobalRef))}
