import random

import pytest
import yaml
from hypothesis import given, settings, strategies as st

from ghostwit.analysis import generate_witness, run_mutexmeet_analysis, run_protection_analysis
from ghostwit.core import Const
from ghostwit.corpus import CorpusConfig, random_program, random_witness
from ghostwit.format import (
    ExpressionSyntax, FormatError, GhostLocalsUnsupported, MissingLocation, UndeclaredGhost, UnknownLocation,
    emit_witness, parse_witness,
)
from ghostwit.witness import GhostDecl, GhostWitness, Update, running_example_witness

GHOST_ENTRY = {
    "ghost_variables": [
        {"name": "g", "type": "int", "scope": "global", "initial": {"value": 0, "format": "c_expression"}},
    ],
    "ghost_updates": [
        {"location": {"line": line}, "updates": [{"variable": "g", "value": v, "format": "c_expression"}]}
        for line, v in ((4, 1), (6, 0), (8, 1), (11, 0))
    ],
}
INVARIANT = {"type": "location_invariant", "location": {"line": 4}, "value": "g == 0 ==> used == 0",
             "format": "c_expression"}


def _strip_locations(x):
    # compare lines only; columns and file names are not part of the golden shape
    if isinstance(x, dict):
        if "line" in x and "column" in x:
            return {"line": x["line"]}
        return {k: _strip_locations(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_strip_locations(v) for v in x]
    return x


def test_golden_document(running):
    p, sm, _ = running
    doc = yaml.safe_load(emit_witness(running_example_witness(p, sm), sm))
    assert [e["entry_type"] for e in doc] == ["invariant_set", "ghost_instrumentation"]
    assert all(list(e) == ["entry_type", "metadata", "content"] for e in doc)
    assert _strip_locations(doc[0]["content"]) == [{"invariant": INVARIANT}]
    assert _strip_locations(doc[1]["content"]) == GHOST_ENTRY


def test_key_order(running):
    p, sm, _ = running
    doc = yaml.safe_load(emit_witness(running_example_witness(p, sm), sm))
    g = doc[1]["content"]["ghost_variables"][0]
    assert list(g) == ["name", "type", "scope", "initial"]
    assert list(g["initial"]) == ["value", "format"]
    u = doc[1]["content"]["ghost_updates"][0]
    assert list(u) == ["location", "updates"]
    assert list(u["updates"][0]) == ["variable", "value", "format"]
    assert list(doc[0]["content"][0]["invariant"]) == ["type", "location", "value", "format"]


def test_generated_witness_has_golden_shape(running):
    p, sm, _ = running
    doc = yaml.safe_load(emit_witness(generate_witness(p, run_mutexmeet_analysis(p)), sm))
    ghosts = doc[1]["content"]
    assert ghosts["ghost_variables"][0]["scope"] == "global"
    assert [u["location"]["line"] for u in ghosts["ghost_updates"]] == [4, 6, 8, 11]
    assert doc[0]["content"][0]["invariant"]["value"] == "m_locked == 0 ==> used == 0"


def test_metadata_is_deterministic(running):
    p, sm, text = running
    w = running_example_witness(p, sm)
    meta = {"file": "running_example.cw", "source": text}
    a = emit_witness(w, sm, meta)
    assert a == emit_witness(w, sm, dict(meta))
    md = yaml.safe_load(a)[0]["metadata"]
    assert md["format_version"] == "2.1"
    assert md["creation_time"] == "1970-01-01T00:00:00Z"
    assert md["task"]["input_files"] == ["running_example.cw"]


@pytest.mark.parametrize("style", ["arrow", "c"])
def test_round_trip_running_example(running, style):
    p, sm, _ = running
    w = running_example_witness(p, sm)
    text = emit_witness(w, sm, implication_style=style)
    assert parse_witness(text, p, sm) == w
    if style == "c":
        assert "!(g == 0) || (used == 0)" in text


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.booleans(), st.sampled_from(["arrow", "c"]))
def test_round_trip_and_byte_stability(seed, generated, style):
    s = random_program(seed, CorpusConfig(atomic=True))
    rng = random.Random(seed)
    base = generate_witness(s.program, run_protection_analysis(s.program)) if generated else None
    w = random_witness(rng, s.program, s.sm, base)
    text = emit_witness(w, s.sm, implication_style=style)
    back = parse_witness(text, s.program, s.sm)
    assert back == w
    assert emit_witness(back, s.sm, implication_style=style) == text


def test_empty_witness(running):
    p, sm, _ = running
    text = emit_witness(GhostWitness(), sm)
    doc = yaml.safe_load(text)
    assert [e["entry_type"] for e in doc] == ["invariant_set"]
    assert doc[0]["content"] == []
    assert parse_witness(text, p, sm) == GhostWitness()


def test_ghost_only_witness(running):
    p, sm, _ = running
    w = GhostWitness((GhostDecl("b", "bool", Const(1)),))
    doc = yaml.safe_load(emit_witness(w, sm))
    assert [e["entry_type"] for e in doc] == ["ghost_instrumentation"]
    assert doc[0]["content"]["ghost_variables"][0]["type"] == "_Bool"
    assert parse_witness(emit_witness(w, sm), p, sm) == w


def _doc(running, edit):
    p, sm, _ = running
    doc = yaml.safe_load(emit_witness(running_example_witness(p, sm), sm))
    edit(doc)
    return yaml.safe_dump(doc, sort_keys=False)


def test_unknown_location(running):
    p, sm, _ = running
    text = _doc(running, lambda d: d[0]["content"][0]["invariant"]["location"].update(line=999))
    with pytest.raises(UnknownLocation):
        parse_witness(text, p, sm)
    text = _doc(running, lambda d: d[1]["content"]["ghost_updates"][0]["location"].update(line=999))
    with pytest.raises(UnknownLocation):
        parse_witness(text, p, sm)


def test_undeclared_ghost(running):
    p, sm, _ = running
    text = _doc(running, lambda d: d[1]["content"]["ghost_updates"][0]["updates"][0].update(variable="h"))
    with pytest.raises(UndeclaredGhost):
        parse_witness(text, p, sm)


def test_expression_syntax(running):
    p, sm, _ = running
    text = _doc(running, lambda d: d[0]["content"][0]["invariant"].update(value="g == "))
    with pytest.raises(ExpressionSyntax):
        parse_witness(text, p, sm)


def test_ghost_locals_unsupported(running):
    p, sm, _ = running
    with pytest.raises(GhostLocalsUnsupported):
        emit_witness(GhostWitness((), {"l": Const(0)}), sm)
    text = _doc(running, lambda d: d[1]["content"]["ghost_variables"][0].update(scope="local"))
    with pytest.raises(GhostLocalsUnsupported):
        parse_witness(text, p, sm)


def test_missing_location(running):
    p, sm, _ = running
    with pytest.raises(MissingLocation):
        emit_witness(GhostWitness((), {}, {}, {999: Const(1)}), sm)
    check = next(e for e in p.edges() if type(e.action).__name__ == "Assert")
    w = GhostWitness((GhostDecl("h", "int", Const(0)),), {}, {check: (Update("h", Const(1)),)})
    with pytest.raises(MissingLocation):
        emit_witness(w, sm)


@pytest.mark.parametrize("text", ["{a: 1}", "- foo: 1", "- entry_type: violation_sequence", "[: bad"])
def test_malformed_documents(running, text):
    p, sm, _ = running
    with pytest.raises(FormatError):
        parse_witness(text, p, sm)


def test_unknown_implication_style(running):
    _, sm, _ = running
    with pytest.raises(ValueError):
        emit_witness(GhostWitness(), sm, implication_style="latex")
