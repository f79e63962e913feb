"""Command-line front end.

Exit codes: 0 success, 1 logical failure (proof failed, arithmetic
refuted, engine error), 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path

from . import syntax as S
from .creal import DEFAULT_PRECISION, State, as_creal
from .engine import (DEFAULT_REPEAT_CAP, DemonScript, EngineError, IdleStrategy,
                     Role, extract, play, script_angel, script_demon)
from .prover import Policy, check, format_proof, parse_proofs
from .statics import bound_vars, free_vars, must_bound_vars

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

CONFIG_ENV = "CDGL_CONFIG"


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    precision: int = DEFAULT_PRECISION
    repeat_cap: int = DEFAULT_REPEAT_CAP
    oracle_policy: str = Policy.INTERVAL_THEN_ASSUME.value
    solves_tol: str = "1/1048576"
    grid: int = 128
    seed: int = 0

    def __post_init__(self):
        for name in ("precision", "repeat_cap", "grid"):
            if int(getattr(self, name)) <= 0:
                raise UsageError(f"config {name} must be positive")
        if Fraction(self.solves_tol) <= 0:
            raise UsageError("config solves_tol must be positive")
        if self.seed < 0:
            raise UsageError("config seed must be nonnegative")
        Policy(self.oracle_policy)

    @property
    def policy(self) -> Policy:
        return Policy(self.oracle_policy)

    @staticmethod
    def load(path: str | None) -> "RunConfig":
        if path is None:
            return RunConfig()
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        data = data.get("run", data)
        known = {f.name for f in dataclasses.fields(RunConfig)}
        unknown = set(data) - known
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return RunConfig(**{k: (str(v) if k == "solves_tol" else v) for k, v in data.items()})

    def dumps(self) -> str:
        lines = ["[run]"]
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {json.dumps(v)}")
        return "\n".join(lines) + "\n"


# ----------------------------------------------------------------- loading

def _read(path: str) -> str:
    p = Path(path)
    if not p.exists() and p.parts and p.parts[0] == "corpus":
        packaged = resources.files("cdgl").joinpath(*p.parts)
        if packaged.is_file():
            return packaged.read_text()
    try:
        return p.read_text()
    except OSError as err:
        raise UsageError(f"cannot read {path}: {err.strerror}") from None


def _split_paths(paths):
    mods = [p for p in paths if p.endswith(".cdgl")]
    proofs = [p for p in paths if p.endswith(".cdglp")]
    other = [p for p in paths if p not in mods and p not in proofs]
    if other:
        raise UsageError(f"expected .cdgl or .cdglp files, got {other[0]}")
    return mods, proofs


def _load_module(paths):
    env: dict = {}
    mod = None
    for path in paths:
        try:
            mod = S.parse_module(_read(path), env)
        except S.ParseError as err:
            raise _FileParseError(path, err) from None
        env = mod.env
    return mod, env


class _FileParseError(Exception):
    def __init__(self, path, err):
        super().__init__(f"{path}:{err.line}:{err.col}: {err.msg}")


def _load_proofs(paths, env):
    out = []
    for path in paths:
        try:
            out.extend(parse_proofs(_read(path), env))
        except S.ParseError as err:
            raise _FileParseError(path, err) from None
    return out


def _find_proof(proofs, name):
    if name is None:
        if len(proofs) != 1:
            raise UsageError("several proofs given; pick one with --proof")
        return proofs[0]
    for p in proofs:
        if p.name == name:
            return p
    raise UsageError(f"no proof named {name!r}")


def _parse_state(text: str | None, env) -> State:
    vals = {}
    if text:
        for part in text.split(","):
            name, eq, rhs = part.partition("=")
            if not eq:
                raise UsageError(f"--init entries look like x=1/2, got {part!r}")
            vals[name.strip()] = S.parse(rhs, "term", env)
    st = State()
    for name, t in vals.items():
        from .creal import term_creal
        st = st.set(name, term_creal(t, st))
    return st


def _demon_from(spec: str | None, seed: int, env, role=Role.DEMON):
    if spec is None:
        return IdleStrategy(role)
    make = script_demon if role is Role.DEMON else script_angel
    if spec.endswith(".json"):
        try:
            data = json.loads(_read(spec))
        except json.JSONDecodeError as err:
            raise UsageError(f"{spec}: {err}") from None
        try:
            script = DemonScript.from_json(data, Path(spec).stem)
        except ValueError as err:
            raise UsageError(f"{spec}: {err}") from None
        if "seed" not in data:
            script.seed = seed
        return make(script, env)
    try:
        return make(DemonScript.parse_spec(spec, seed), env)
    except ValueError as err:
        raise UsageError(str(err)) from None


# ---------------------------------------------------------------- commands

def cmd_check(args, cfg: RunConfig) -> int:
    mods, proof_files = _split_paths(args.paths)
    if not proof_files:
        raise UsageError("check needs at least one .cdglp file")
    _, env = _load_module(mods)
    proofs = _load_proofs(proof_files, env)
    policy = Policy.STRICT if args.strict else cfg.policy
    ok = True
    report = []
    for p in proofs:
        res = check(p.ctx, p.proof, p.goal, policy)
        ok &= res.ok
        verdict = "Checked" if res.ok else str(res.verdict)
        print(f"{p.name}: {verdict}")
        for o in res.obligations:
            tag = f" [{o.lemma}]" if o.lemma else ""
            print(f"  {o.verdict.value:8} {o.path}{tag}")
            if args.verbose:
                print(f"           {o.sequent.render()}")
        assumed = len(res.assumed)
        print(f"  {len(res.obligations)} arithmetic leaves, {assumed} assumed")
        report.append({"proof": p.name, **res.to_json()})
    if args.json:
        Path(args.json).write_text(json.dumps(report, indent=1) + "\n")
    return 0 if ok else 1


def _checked_strategy(args, cfg):
    mods, proof_files = _split_paths(args.paths)
    mod, env = _load_module(mods)
    proofs = _load_proofs(proof_files, env)
    p = _find_proof(proofs, args.proof)
    res = check(p.ctx, p.proof, p.goal, cfg.policy)
    if not res.ok:
        print(f"{p.name}: {res.verdict}", file=sys.stderr)
        return None, mod, env
    return extract(res, p.name), mod, env


def cmd_extract(args, cfg: RunConfig) -> int:
    strat, _, _ = _checked_strategy(args, cfg)
    if strat is None:
        return 1
    print(f"strategy: {strat.role.value} ({strat.provenance})")
    for a in strat.assumptions:
        print(f"assumes:  {S.pretty(S.resugar(a))}")
    print(f"game:     {S.pretty(S.resugar(strat.game))}")
    print(f"goal:     {S.pretty(S.resugar(strat.post))}")
    print("decisions:")
    for line in _decisions(strat.root):
        print(f"  {line}")
    return 0


def _decisions(node, out=None):
    out = [] if out is None else out
    r, pl = node.rule, node.payload
    if r == "<:*>I":
        out.append(f"{node.path}: choose {node.sequent.goal.game.var} = {S.pretty(pl['witness'])}")
    elif r in ("<u>I1", "<u>I2"):
        out.append(f"{node.path}: take the {'left' if r == '<u>I1' else 'right'} branch")
    elif r == "<*>I":
        out.append(f"{node.path}: repeat while {S.pretty(pl['metric'])} > "
                   f"{S.pretty(pl.get('zero', S.lit(0)))}")
    elif r == "dsolve":
        out.append(f"{node.path}: evolve along the closed-form solution")
    elif r == "DV":
        out.append(f"{node.path}: evolve for {S.pretty(pl['d'])}")
    for c in node.children:
        _decisions(c, out)
    return out


def _run_play(args, cfg, strat, mod, env, seed, demon_spec):
    game = strat.game
    if args.game:
        if args.game not in mod.games:
            raise UsageError(f"no game named {args.game!r}")
        game = mod.games[args.game]
    init = _parse_state(args.init, env)
    opp_role = Role.DEMON if strat.role is Role.ANGEL else Role.ANGEL
    other = _demon_from(demon_spec, seed, env, opp_role)
    angel, demon = (strat, other) if strat.role is Role.ANGEL else (other, strat)
    return play(game, angel, demon, init, cfg.precision, cfg.repeat_cap,
                Fraction(cfg.solves_tol), cfg.grid)


def _summary(trace) -> str:
    snap = trace.final_snapshot()
    state = ", ".join(f"{x}={float(iv.mid):.12g}" for x, iv in snap.items()
                      if not x.endswith("'"))
    ev = "; ".join(f"{who}: {e['formula']} -> {e['holds']}"
                   for who, e in trace.evidence.items())
    tail = f" (forfeit by {trace.forfeit['player']})" if trace.forfeit else ""
    return f"final {state}{tail}\n  evidence {ev}"


def cmd_play(args, cfg: RunConfig) -> int:
    strat, mod, env = _checked_strategy(args, cfg)
    if strat is None:
        return 1
    try:
        trace = _run_play(args, cfg, strat, mod, env, cfg.seed, args.demon)
    except EngineError as err:
        print(f"play: {type(err).__name__}: {err}", file=sys.stderr)
        return 1
    if args.out:
        Path(args.out).write_text(trace.dumps() + "\n")
    print(_summary(trace))
    return 0 if all(e["holds"] is not False for who, e in trace.evidence.items()
                    if trace.forfeit is None or trace.forfeit["player"] != who) else 1


def cmd_sweep(args, cfg: RunConfig) -> int:
    strat, mod, env = _checked_strategy(args, cfg)
    if strat is None:
        return 1
    out_dir = Path(args.out_dir) if args.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    failures = 0
    for i in range(args.seeds):
        seed = cfg.seed + i
        try:
            trace = _run_play(args, cfg, strat, mod, env, seed, args.demon)
        except EngineError as err:
            print(f"seed {seed}: {type(err).__name__}: {err}")
            failures += 1
            continue
        if out_dir:
            (out_dir / f"trace_{seed:04d}.json").write_text(trace.dumps() + "\n")
        print(f"seed {seed}: {_summary(trace)}")
    return 1 if failures else 0


def cmd_statics(args, cfg: RunConfig) -> int:
    mods = [p for p in args.paths if p.endswith(".cdgl")]
    _, env = _load_module(mods)
    if args.expr is not None:
        try:
            e = S.parse(args.expr, args.kind, env)
        except S.ParseError as err:
            raise _FileParseError("<expr>", err) from None
    else:
        if args.name not in env:
            raise UsageError(f"no declaration named {args.name!r}")
        e = env[args.name][1]
    show = lambda xs: "{" + ", ".join(sorted(xs)) + "}"  # noqa: E731
    print(f"FV  = {show(free_vars(e))}")
    if isinstance(e, S.GAME_TYPES):
        print(f"BV  = {show(bound_vars(e))}")
        print(f"MBV = {show(must_bound_vars(e))}")
    else:
        print("BV  = {}")
        print("MBV = {}")
    return 0


def cmd_fmt(args, cfg: RunConfig) -> int:
    mods, proof_files = _split_paths(args.paths)
    mod, env = _load_module(mods)
    if mod is not None:
        sys.stdout.write(S.format_module(mod))
    for p in _load_proofs(proof_files, env):
        print(f'(proof {p.name} :goal "{S.pretty(p.goal)}"')
        print(format_proof(p.proof, 1) + ")")
    return 0


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cdgl", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help=f"TOML run configuration (or ${CONFIG_ENV})")
    ap.add_argument("--precision", type=int, help="report precision in bits")
    ap.add_argument("--repeat-cap", type=int, help="loop iteration guard")
    ap.add_argument("--seed", type=int, help="base seed for scripted randomness")
    ap.add_argument("--solves-tol", help="tolerance for sampled ODE checks")
    ap.add_argument("--grid", type=int, help="sample grid for ODE checks")
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", help="check proofs")
    c.add_argument("paths", nargs="+")
    c.add_argument("--strict", action="store_true", help="reject assumed leaves")
    c.add_argument("--json", help="write the report as JSON")
    c.add_argument("-v", "--verbose", action="store_true")

    for name, helptext in (("extract", "show the extracted strategy"),
                           ("play", "play the extracted strategy"),
                           ("sweep", "play against many seeded opponents")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("paths", nargs="+")
        p.add_argument("--proof")
        if name != "extract":
            p.add_argument("--game", help="play this named game instead")
            p.add_argument("--demon", help="opponent script: fixed:TERM, "
                                            "uniform:LO,HI or a JSON file")
            p.add_argument("--init", help="initial state, e.g. x=0,v=0")
        if name == "play":
            p.add_argument("--out", help="write the trace JSON here")
        if name == "sweep":
            p.add_argument("--seeds", type=int, default=20)
            p.add_argument("--out-dir", help="directory for trace files")

    s = sub.add_parser("statics", help="free, bound and must-bound variables")
    s.add_argument("paths", nargs="*")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--name", help="declared name to analyse")
    g.add_argument("--expr", help="expression text to analyse")
    s.add_argument("--kind", default="game", choices=("term", "game", "formula"))

    f = sub.add_parser("fmt", help="pretty-print modules and proofs")
    f.add_argument("paths", nargs="+")
    return ap


COMMANDS = {"check": cmd_check, "extract": cmd_extract, "play": cmd_play,
            "sweep": cmd_sweep, "statics": cmd_statics, "fmt": cmd_fmt}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config or os.environ.get(CONFIG_ENV))
        overrides = {"precision": args.precision, "repeat_cap": args.repeat_cap,
                     "seed": args.seed, "solves_tol": args.solves_tol,
                     "grid": args.grid}
        cfg = dataclasses.replace(cfg, **{k: v for k, v in overrides.items()
                                          if v is not None})
        return COMMANDS[args.command](args, cfg)
    except (UsageError, OSError, tomllib.TOMLDecodeError) as err:
        print(f"cdgl: {err}", file=sys.stderr)
        return 2
    except _FileParseError as err:
        print(f"cdgl: {err}", file=sys.stderr)
        return 2
    except ValueError as err:
        print(f"cdgl: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
