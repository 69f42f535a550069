"""Command-line entry point.

Every verdict-producing subcommand prints ``VERDICT <kind>`` as its first line.
Exit codes: 0 safe/valid/confirmed, 1 unsafe/invalid/rejected (and evaluation
errors), 2 bound exceeded, 3 input error, 4 internal error.
"""

from __future__ import annotations

import argparse
import random
import sys
import traceback
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import __version__
from .analysis import generate_witness, run_mutexmeet_analysis, run_protection_analysis
from .core import EvalError
from .format import emit_witness, parse_witness
from .frontend import ParseError, RenderError, render_program, parse_program
from .interleave import Bounds, VerdictKind, explore, format_counterexample
from .traces import NotInLangMG, trace_safety
from .witness import (
    WitnessError, confirm, instrument, lang_mg_violations, project_interleaving,
    split, validate_interleaving, validate_local_trace,
)

EXIT = {
    "SAFE": 0, "VALID": 0, "CONFIRMED": 0, "AGREE": 0,
    "UNSAFE": 1, "INVALID": 1, "REJECTED": 1, "EVAL_ERROR": 1, "DISAGREE": 1,
    "BOUND_EXCEEDED": 2,
}
INPUT_ERROR = 3
INTERNAL_ERROR = 4
DIFFTEST_MAX_EVENTS = 1024


class InputError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    program: Optional[str] = None
    witness: Optional[str] = None
    bounds: Bounds = Bounds()
    mode: str = "mutexmeet"
    ghosts: bool = True
    semantics: str = "interleaving"
    output: Optional[str] = None
    seed: int = 0
    count: int = 50
    jobs: int = 1


def _read(path):
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _load_program(path):
    text = _read(path)
    try:
        p, sm = parse_program(text)
    except ParseError as exc:
        raise InputError(f"{path}:{exc}") from None
    return p, sm, text


def _load_witness(path, p, sm):
    try:
        return parse_witness(_read(path), p, sm)
    except WitnessError as exc:
        raise InputError(f"{path}: {exc}") from None


def _analysis(p, mode):
    return run_protection_analysis(p) if mode == "protection" else run_mutexmeet_analysis(p)


def _print_verdict(kind, out):
    print(f"VERDICT {kind}", file=out)
    return EXIT[kind]


def _explain(v, sm, out, ip=None):
    if v is None:
        return
    if v.error:
        print(f"error: {v.error}", file=out)
    if v.kind == VerdictKind.BOUND_EXCEEDED:
        print("exploration stopped at a bound: " + ", ".join(f"{k}={v.stats[k]}" for k in sorted(v.stats)), file=out)
    if v.assert_id is not None:
        print(f"violated: {v.assert_id}", file=out)
    cx = v.counterexample
    if cx is None:
        return
    if hasattr(cx, "dump"):
        print(cx.dump(sm), file=out)
    else:
        if ip is not None:
            cx = project_interleaving(ip, cx)
        print(format_counterexample(cx, sm), file=out)


def cmd_verify(cfg, out):
    p, sm, _ = _load_program(cfg.program)
    v = explore(p, cfg.bounds, jobs=cfg.jobs)
    code = _print_verdict(v.kind.value, out)
    _explain(v, sm, out)
    print(f"states: {v.stats.get('states')}", file=out)
    return code


def cmd_traces(cfg, out):
    p, sm, _ = _load_program(cfg.program)
    q = p
    if lang_mg_violations(p):
        q = split(p)
    v = trace_safety(q, cfg.bounds)
    code = _print_verdict(v.kind.value, out)
    if q is not p:
        print("note: checked the split program (each global accessed under its own mutex)", file=out)
    _explain(v, sm, out)
    return code


def cmd_analyze(cfg, out):
    p, _, _ = _load_program(cfg.program)
    print(_analysis(p, cfg.mode).report(), file=out)
    return 0


def cmd_gen_witness(cfg, out):
    p, sm, text = _load_program(cfg.program)
    w = generate_witness(p, _analysis(p, cfg.mode), ghosts=cfg.ghosts)
    doc = emit_witness(w, sm, {"file": Path(cfg.program).name, "source": text})
    dest = cfg.output or str(Path(cfg.program).with_suffix("")) + ".witness.yml"
    Path(dest).write_text(doc)
    print(f"wrote {dest}: {len(w.invariants)} invariants, {len(w.globals)} ghosts", file=out)
    return 0


def cmd_instrument(cfg, out):
    p, sm, _ = _load_program(cfg.program)
    w = _load_witness(cfg.witness, p, sm)
    print(render_program(instrument(p, w).program), end="", file=out)
    return 0


def cmd_split(cfg, out):
    p, _, _ = _load_program(cfg.program)
    print(render_program(split(p)), end="", file=out)
    return 0


def cmd_validate(cfg, out):
    p, sm, _ = _load_program(cfg.program)
    w = _load_witness(cfg.witness, p, sm)
    if cfg.semantics == "trace":
        r = validate_local_trace(p, w, cfg.bounds)
    else:
        r = validate_interleaving(p, w, cfg.bounds, jobs=cfg.jobs)
    code = _print_verdict(r.kind.value, out)
    if r.origin:
        print(f"failed assertion from the {r.origin}", file=out)
    _explain(r.verdict, sm, out, instrument(p, w) if cfg.semantics != "trace" else None)
    return code


def cmd_confirm(cfg, out):
    p, sm, _ = _load_program(cfg.program)
    w = _load_witness(cfg.witness, p, sm)
    r = confirm(p, w, cfg.bounds, jobs=cfg.jobs)
    code = _print_verdict(r.kind.value, out)
    _explain(r.verdict, sm, out, instrument(p, w))
    return code


def difftest(seed: int, count: int, bounds: Bounds, jobs: int = 1) -> dict:
    """Run the three differential suites; returns per-suite counters."""
    from .corpus import CorpusConfig, corpus, random_witness
    results = {}

    def tally(name, seed_, a, b):
        r = results.setdefault(name, {"agree": 0, "disagree": 0, "inconclusive": 0, "failures": []})
        if VerdictKind.BOUND_EXCEEDED.value in (a.kind.value, b.kind.value):
            r["inconclusive"] += 1
        elif a.kind.value == b.kind.value and getattr(a, "violated", None) == getattr(b, "violated", None):
            r["agree"] += 1
        else:
            r["disagree"] += 1
            r["failures"].append(seed_)

    for s in corpus(seed, count):
        q = split(s.program)
        tally("trace-vs-interleaving", s.seed, explore(q, bounds, stop_on_violation=False, jobs=jobs),
              trace_safety(q, bounds, stop_on_violation=False))
    for s in corpus(seed + 1, count, CorpusConfig(atomic=True)):
        tally("split", s.seed, explore(s.program, bounds, stop_on_violation=False, jobs=jobs),
              explore(split(s.program), bounds, stop_on_violation=False, jobs=jobs))
    for s in corpus(seed + 2, count, CorpusConfig(atomic=True)):
        rng = random.Random(s.seed)
        base = generate_witness(s.program, run_mutexmeet_analysis(s.program)) if rng.random() < 0.5 else None
        w = random_witness(rng, s.program, s.sm, base)
        tally("witness-validity", s.seed, validate_interleaving(s.program, w, bounds, jobs),
              validate_local_trace(s.program, w, bounds))
    return results


def cmd_difftest(cfg, out):
    res = difftest(cfg.seed, cfg.count, cfg.bounds, cfg.jobs)
    bad = any(r["disagree"] for r in res.values())
    code = _print_verdict("DISAGREE" if bad else "AGREE", out)
    for name, r in res.items():
        line = f"{name}: {r['agree']} agree, {r['disagree']} disagree, {r['inconclusive']} inconclusive"
        if r["failures"]:
            line += " (seeds " + ", ".join(map(str, r["failures"][:10])) + ")"
        print(line, file=out)
    return code


COMMANDS = {
    "verify": cmd_verify, "traces": cmd_traces, "analyze": cmd_analyze, "gen-witness": cmd_gen_witness,
    "instrument": cmd_instrument, "split": cmd_split, "validate": cmd_validate, "confirm": cmd_confirm,
    "difftest": cmd_difftest,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ghostwit", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"ghostwit {__version__}")
    ap.add_argument("--jobs", type=int, default=1, help="worker processes for state-space exploration")
    ap.add_argument("--max-steps", type=int, default=None)
    ap.add_argument("--max-states", type=int, default=None)
    ap.add_argument("--max-events", type=int, default=None)
    sub = ap.add_subparsers(dest="command", required=True)

    def prog(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("program", help="program file (.cw)")
        return sp

    prog("verify", "explore all interleavings")
    prog("traces", "check safety on local traces")
    for name, help_ in (("analyze", "print the protection analysis report"),
                        ("gen-witness", "generate a witness from the analysis")):
        sp = prog(name, help_)
        sp.add_argument("--mode", choices=["protection", "mutexmeet"], default="mutexmeet")
        if name == "gen-witness":
            sp.add_argument("--no-ghosts", action="store_true", help="emit invariants without ghost variables")
            sp.add_argument("-o", "--output", help="witness file (default: <program>.witness.yml)")
    prog("split", "print the program with a mutex per global")
    for name, help_ in (("instrument", "print the program instrumented with a witness"),
                        ("validate", "check a witness"), ("confirm", "check only a witness's invariants")):
        sp = prog(name, help_)
        sp.add_argument("witness", help="witness file (.witness.yml)")
        if name == "validate":
            sp.add_argument("--semantics", choices=["interleaving", "trace"], default="interleaving")
    sp = sub.add_parser("difftest", help="differential tests on random programs")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--count", type=int, default=50)
    return ap


def parse_config(argv) -> RunConfig:
    a = build_parser().parse_args(argv)
    events_default = DIFFTEST_MAX_EVENTS if a.command == "difftest" else Bounds.max_events
    try:
        bounds = Bounds(
            a.max_steps if a.max_steps is not None else Bounds.max_steps,
            a.max_states if a.max_states is not None else Bounds.max_states,
            a.max_events if a.max_events is not None else events_default,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if a.jobs < 1:
        raise InputError("--jobs must be positive")
    if a.command == "difftest" and a.count < 0:
        raise InputError("--count must be non-negative")
    return RunConfig(
        command=a.command,
        program=getattr(a, "program", None),
        witness=getattr(a, "witness", None),
        bounds=bounds,
        mode=getattr(a, "mode", "mutexmeet"),
        ghosts=not getattr(a, "no_ghosts", False),
        semantics=getattr(a, "semantics", "interleaving"),
        output=getattr(a, "output", None),
        seed=getattr(a, "seed", 0),
        count=getattr(a, "count", 50),
        jobs=a.jobs,
    )


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    try:
        cfg = parse_config(sys.argv[1:] if argv is None else argv)
        return COMMANDS[cfg.command](cfg, out)
    except SystemExit as exc:  # argparse
        return INPUT_ERROR if exc.code not in (0, None) else 0
    except (InputError, WitnessError, NotInLangMG, RenderError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return INPUT_ERROR
    except EvalError as exc:
        print("VERDICT EVAL_ERROR", file=out)
        print(f"error: {exc}", file=out)
        return EXIT["EVAL_ERROR"]
    except Exception:
        traceback.print_exc()
        return INTERNAL_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
