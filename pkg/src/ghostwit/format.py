"""YAML exchange format for witnesses: ``invariant_set`` and
``ghost_instrumentation`` entries with locations in the program source."""

from __future__ import annotations

import hashlib
import uuid
from typing import Optional

import yaml

from . import __version__
from .core import (
    Const, Create, GlobalRead, GlobalWrite, LocalUpdate, Lock, Program, Unlock, conj,
)
from .frontend import ParseError, SourceMap, parse_expr, print_expr
from .witness import GhostDecl, GhostWitness, Update, UnknownLocation as _UnknownLocation, WitnessError, check_witness

C_EXPRESSION = "c_expression"
DEFAULT_TIMESTAMP = "1970-01-01T00:00:00Z"
_TYPES = {"int": "int", "bool": "_Bool"}
_TYPES_IN = {"int": "int", "_Bool": "bool", "bool": "bool"}
_UPDATABLE = (Lock, Unlock, Create, LocalUpdate, GlobalRead, GlobalWrite)


class FormatError(WitnessError):
    pass


class GhostLocalsUnsupported(FormatError):
    pass


class MissingLocation(FormatError):
    pass


class UnknownLocation(FormatError, _UnknownLocation):
    pass


class UndeclaredGhost(FormatError):
    pass


class ExpressionSyntax(FormatError):
    pass


class _Flow(dict):
    pass


class _Dumper(yaml.SafeDumper):
    pass


_Dumper.add_representer(_Flow, lambda d, data: d.represent_mapping("tag:yaml.org,2002:map", data.items(), flow_style=True))
_Dumper.add_representer(dict, lambda d, data: d.represent_mapping("tag:yaml.org,2002:map", data.items(), flow_style=False))


def _value(e, c_mode):
    if isinstance(e, Const) and isinstance(e.value, int):
        return e.value
    return print_expr(e, c_mode)


def updatable(e) -> bool:
    """Edges whose statement may carry ghost updates in the exchange format."""
    return isinstance(e.action, _UPDATABLE)


def _node_location(sm: SourceMap, n):
    loc = sm.node_loc.get(n)
    if loc is None:
        raise MissingLocation(f"node {n} has no source location")
    if min(sm.nodes_at(loc)) != n:
        raise MissingLocation(f"node {n} shares location {loc[0]}:{loc[1]} with another node")
    return loc


def _edge_location(sm: SourceMap, e):
    loc = sm.edge_loc.get(e)
    if loc is None:
        raise MissingLocation(f"edge {e.src}->{e.dst} has no source location")
    if not updatable(e):
        raise MissingLocation(f"statement at {loc[0]}:{loc[1]} cannot carry ghost updates")
    if [x for x in sm.edges_at(loc) if updatable(x)] != [e]:
        raise MissingLocation(f"location {loc[0]}:{loc[1]} does not identify a single statement")
    return loc


def _metadata(meta: dict) -> dict:
    src = meta.get("source", "")
    digest = hashlib.sha256(src.encode()).hexdigest()
    file = meta.get("file", "program.cw")
    return {
        "format_version": "2.1",
        "uuid": str(uuid.uuid5(uuid.NAMESPACE_URL, f"{file}:{digest}:{meta.get('entry', '')}")),
        "creation_time": meta.get("timestamp", DEFAULT_TIMESTAMP),
        "producer": {"name": meta.get("producer", "ghostwit"), "version": meta.get("version", __version__)},
        "task": {"input_files": [file], "input_file_hashes": {file: digest}, "language": "cw"},
    }


def emit_witness(w: GhostWitness, sm: SourceMap, meta: Optional[dict] = None,
                 implication_style: str = "arrow") -> str:
    """Serialize ``w``.  ``implication_style`` is ``'arrow'`` (``A ==> B``) or
    ``'c'`` (``!(A) || (B)``); both spellings parse back to the same witness."""
    if implication_style not in ("arrow", "c"):
        raise ValueError(f"unknown implication style {implication_style!r}")
    if w.locals:
        raise GhostLocalsUnsupported("the exchange format has no ghost locals")
    meta = dict(meta or {})
    c_mode = implication_style == "c"
    file = meta.get("file", "program.cw")

    def location(loc):
        return _Flow(file_name=file, line=loc[0], column=loc[1])

    doc = []
    invs = sorted((_node_location(sm, n), inv) for n, inv in w.invariants.items())
    if invs or not w.globals:
        content = [{"invariant": {
            "type": "location_invariant",
            "location": location(loc),
            "value": print_expr(inv, c_mode),
            "format": C_EXPRESSION,
        }} for loc, inv in invs]
        doc.append({"entry_type": "invariant_set", "metadata": _metadata({**meta, "entry": "invariant_set"}),
                    "content": content})
    if w.globals:
        ghosts = [{
            "name": d.name,
            "type": _TYPES[d.type],
            "scope": "global",
            "initial": {"value": _value(d.init, c_mode), "format": C_EXPRESSION},
        } for d in w.globals]
        ups = sorted((_edge_location(sm, e), u) for e, u in w.updates.items())
        updates = [{
            "location": location(loc),
            "updates": [{"variable": u.variable, "value": _value(u.value, c_mode), "format": C_EXPRESSION}
                        for u in us],
        } for loc, us in ups]
        doc.append({"entry_type": "ghost_instrumentation",
                    "metadata": _metadata({**meta, "entry": "ghost_instrumentation"}),
                    "content": {"ghost_variables": ghosts, "ghost_updates": updates}})
    return yaml.dump(doc, Dumper=_Dumper, sort_keys=False, default_flow_style=False, width=1000)


def _expr(v, what):
    if isinstance(v, bool):
        return Const(int(v))
    if isinstance(v, int):
        return Const(v)
    if not isinstance(v, str):
        raise ExpressionSyntax(f"{what}: expected an expression, got {v!r}")
    try:
        return parse_expr(v, recover_implications=True)
    except ParseError as exc:
        raise ExpressionSyntax(f"{what}: {exc}") from None


def _loc(d, what):
    if not isinstance(d, dict) or "line" not in d:
        raise FormatError(f"{what}: location needs a line")
    try:
        return int(d["line"]), int(d.get("column", 1))
    except (TypeError, ValueError):
        raise FormatError(f"{what}: malformed location {d!r}") from None


def _check_format(d, what):
    f = d.get("format", C_EXPRESSION)
    if f != C_EXPRESSION:
        raise FormatError(f"{what}: unsupported format {f!r}")


def parse_witness(text: str, p: Program, sm: SourceMap) -> GhostWitness:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise FormatError(f"malformed YAML: {exc}") from None
    if doc is None:
        doc = []
    if not isinstance(doc, list):
        raise FormatError("a witness is a list of entries")
    decls = []
    invariants = {}
    raw_updates = []
    for i, entry in enumerate(doc):
        if not isinstance(entry, dict) or "entry_type" not in entry:
            raise FormatError(f"entry {i} has no entry_type")
        kind = entry["entry_type"]
        content = entry.get("content")
        if kind == "invariant_set":
            for item in content or []:
                inv = item.get("invariant") if isinstance(item, dict) else None
                if not isinstance(inv, dict):
                    raise FormatError(f"entry {i}: malformed invariant")
                if inv.get("type", "location_invariant") != "location_invariant":
                    raise FormatError(f"entry {i}: unsupported invariant type {inv.get('type')!r}")
                _check_format(inv, f"entry {i}")
                loc = _loc(inv.get("location"), f"entry {i}")
                nodes = sm.nodes_at(loc)
                if not nodes:
                    raise UnknownLocation(f"no statement at {loc[0]}:{loc[1]}")
                n = min(nodes)
                e = _expr(inv.get("value"), f"invariant at {loc[0]}:{loc[1]}")
                invariants[n] = conj([invariants[n], e]) if n in invariants else e
        elif kind == "ghost_instrumentation":
            content = content or {}
            for g in content.get("ghost_variables") or []:
                scope = g.get("scope", "global")
                if scope != "global":
                    raise GhostLocalsUnsupported(f"ghost {g.get('name')} has scope {scope!r}")
                ty = _TYPES_IN.get(g.get("type"))
                if ty is None:
                    raise FormatError(f"ghost {g.get('name')} has unsupported type {g.get('type')!r}")
                init = g.get("initial") or {"value": 0}
                _check_format(init, f"ghost {g.get('name')}")
                decls.append(GhostDecl(str(g["name"]), ty, _expr(init.get("value", 0), f"initial value of {g['name']}")))
            for u in content.get("ghost_updates") or []:
                loc = _loc(u.get("location"), f"entry {i}")
                raw_updates.append((loc, u.get("updates") or []))
        else:
            raise FormatError(f"unsupported entry type {kind!r}")
    names = {d.name for d in decls}
    updates = {}
    for loc, ups in raw_updates:
        cands = [e for e in sm.edges_at(loc) if updatable(e)]
        if not cands:
            if sm.edges_at(loc) or sm.nodes_at(loc):
                raise FormatError(f"statement at {loc[0]}:{loc[1]} cannot carry ghost updates")
            raise UnknownLocation(f"no statement at {loc[0]}:{loc[1]}")
        if len(cands) > 1:
            raise FormatError(f"location {loc[0]}:{loc[1]} is ambiguous")
        e = cands[0]
        seq = []
        for u in ups:
            var = str(u.get("variable"))
            if var not in names:
                raise UndeclaredGhost(f"update of undeclared ghost {var}")
            _check_format(u, f"update of {var}")
            seq.append(Update(var, _expr(u.get("value"), f"update of {var}")))
        if seq:
            updates[e] = updates.get(e, ()) + tuple(seq)
    w = GhostWitness(tuple(decls), {}, updates, invariants)
    check_witness(p, w)
    return w


def load_witness(path, p: Program, sm: SourceMap) -> GhostWitness:
    with open(path) as fh:
        return parse_witness(fh.read(), p, sm)
