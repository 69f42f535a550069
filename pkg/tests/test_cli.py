import io
import shutil
import subprocess
import sys

import pytest
import yaml

from ghostwit import cli
from ghostwit.core import Lock
from ghostwit.format import emit_witness
from ghostwit.frontend import parse_expr, parse_program
from ghostwit.witness import GhostWitness

from conftest import DATA, load
from test_witness import _good_witness_for_unsafe_variant


def run(*argv):
    out = io.StringIO()
    code = cli.main(list(map(str, argv)), out)
    return code, out.getvalue()


@pytest.fixture
def work(tmp_path):
    for name in ("running_example.cw", "unsafe_variant.cw"):
        shutil.copy(DATA / name, tmp_path / name)
    return tmp_path


def test_verify(work):
    code, out = run("verify", work / "running_example.cw")
    assert (code, out.splitlines()[0]) == (0, "VERDICT SAFE")
    code, out = run("verify", work / "unsafe_variant.cw")
    assert (code, out.splitlines()[0]) == (1, "VERDICT UNSAFE")
    assert "violated: main.1" in out
    # counterexample lines are "<tid> <line>:<col> <action>"
    assert any(line == "[] 3:3 create(t1);" for line in out.splitlines())


def test_verdict_does_not_depend_on_jobs(work):
    a = run("verify", work / "unsafe_variant.cw")
    b = run("--jobs", 2, "verify", work / "unsafe_variant.cw")
    assert a == b


def test_bound_exceeded(work):
    code, out = run("--max-states", 3, "verify", work / "running_example.cw")
    assert (code, out.splitlines()[0]) == (2, "VERDICT BOUND_EXCEEDED")


def test_traces(work):
    code, out = run("traces", work / "running_example.cw")
    assert (code, out.splitlines()[0]) == (0, "VERDICT SAFE")
    assert "note: checked the split program" in out
    code, out = run("traces", work / "unsafe_variant.cw")
    assert (code, out.splitlines()[0]) == (1, "VERDICT UNSAFE")
    assert "thread=" in out and "po: " in out


def test_analyze(work):
    code, out = run("analyze", work / "running_example.cw", "--mode", "protection")
    assert code == 0
    assert out.splitlines() == ["used: M[g]={m} [g]=[0,0]", "m: G[m]={used} [m]=used == 0"]


def test_gen_witness_then_validate(work):
    code, out = run("gen-witness", work / "running_example.cw", "--mode", "mutexmeet")
    assert code == 0
    dest = work / "running_example.witness.yml"
    assert dest.exists()
    doc = yaml.safe_load(dest.read_text())
    assert [e["entry_type"] for e in doc] == ["invariant_set", "ghost_instrumentation"]
    for sem in ("interleaving", "trace"):
        code, out = run("validate", work / "running_example.cw", dest, "--semantics", sem)
        assert (code, out.splitlines()[0]) == (0, "VERDICT VALID")
    code, out = run("confirm", work / "running_example.cw", dest)
    assert (code, out.splitlines()[0]) == (0, "VERDICT CONFIRMED")


def test_gen_witness_without_ghosts(work):
    out_file = work / "plain.yml"
    code, _ = run("gen-witness", work / "running_example.cw", "--no-ghosts", "-o", out_file)
    assert code == 0
    doc = yaml.safe_load(out_file.read_text())
    assert [e["entry_type"] for e in doc] == ["invariant_set"]
    assert run("validate", work / "running_example.cw", out_file)[0] == 0


def test_bad_witness_is_invalid(work):
    p, sm, _ = load("running_example.cw")
    lock = next(e for e in p.templates["main"].edges if isinstance(e.action, Lock))
    bad = work / "bad.witness.yml"
    bad.write_text(emit_witness(GhostWitness((), {}, {}, {lock.src: parse_expr("used == 1")}), sm))
    code, out = run("validate", work / "running_example.cw", bad)
    assert (code, out.splitlines()[0]) == (1, "VERDICT INVALID")
    assert "failed assertion from the witness" in out
    assert run("validate", work / "running_example.cw", bad, "--semantics", "trace")[0] == 1
    code, out = run("confirm", work / "running_example.cw", bad)
    assert (code, out.splitlines()[0]) == (1, "VERDICT REJECTED")


def test_confirm_ignores_program_correctness(work):
    p, sm, _ = load("unsafe_variant.cw")
    good = work / "good.witness.yml"
    good.write_text(emit_witness(_good_witness_for_unsafe_variant(p, sm), sm))
    assert run("confirm", work / "unsafe_variant.cw", good)[0] == 0
    assert run("verify", work / "unsafe_variant.cw")[0] == 1
    code, out = run("validate", work / "unsafe_variant.cw", good)
    assert code == 1
    assert "failed assertion from the original" in out


def test_instrument_and_split(work):
    run("gen-witness", work / "running_example.cw")
    code, out = run("instrument", work / "running_example.cw", work / "running_example.witness.yml")
    assert code == 0
    p, _ = parse_program(out)
    assert "m_locked" in p.global_names
    code, out = run("split", work / "running_example.cw")
    assert code == 0
    p, _ = parse_program(out)
    assert "m_used" in p.mutexes


def test_difftest():
    code, out = run("difftest", "--seed", 1, "--count", 5)
    lines = out.splitlines()
    assert (code, lines[0]) == (0, "VERDICT AGREE")
    assert [line.split(":")[0] for line in lines[1:]] == ["trace-vs-interleaving", "split", "witness-validity"]
    assert all("0 disagree" in line for line in lines[1:])


@pytest.mark.parametrize("argv", [
    ["verify", "does-not-exist.cw"],
    ["bogus"],
    ["verify"],
    ["--max-steps", "0", "verify", "x.cw"],
    ["--jobs", "0", "verify", "x.cw"],
])
def test_input_errors(argv, work, capsys):
    assert cli.main(argv, io.StringIO()) == 3


def test_parse_error_is_input_error(work, capsys):
    src = work / "broken.cw"
    src.write_text("thread main { x = ; }")
    assert cli.main(["verify", str(src)], io.StringIO()) == 3
    assert "broken.cw" in capsys.readouterr().err


def test_malformed_witness_is_input_error(work, capsys):
    w = work / "w.yml"
    w.write_text("- entry_type: nonsense\n")
    assert run("validate", work / "running_example.cw", w)[0] == 3


def test_division_by_zero_is_eval_error(work):
    src = work / "div.cw"
    src.write_text("global g: int = 0; thread main { x = g; y = 1 / x; }")
    code, out = run("verify", src)
    assert (code, out.splitlines()[0]) == (1, "VERDICT EVAL_ERROR")


def test_internal_error(work, monkeypatch, capsys):
    def boom(cfg, out):
        raise RuntimeError("boom")
    monkeypatch.setitem(cli.COMMANDS, "verify", boom)
    assert cli.main(["verify", str(work / "running_example.cw")], io.StringIO()) == 4


def test_module_entry_point(work):
    r = subprocess.run([sys.executable, "-m", "ghostwit", "verify", str(work / "running_example.cw")],
                       capture_output=True, text=True)
    assert r.returncode == 0
    assert r.stdout.splitlines()[0] == "VERDICT SAFE"
