"""Executable static-semantics properties used by the unit and acceptance
tests.  Each check returns None on success or a message describing the
counterexample."""

from __future__ import annotations

import random
from fractions import Fraction

from cdgl import syntax as S
from cdgl.creal import State, eval_term
from cdgl.engine import DemonScript, EngineError, Role, ScriptedStrategy, play, truth
from cdgl.statics import (AdmissibilityError, bound_vars, free_vars,
                          must_bound_vars, rename, substitute)

from randgen import NAMES, rand_fo, rand_formula, rand_game, rand_state, rand_term

K = 40


def _script(rng: random.Random) -> DemonScript:
    """State-independent answers for every decision kind."""
    return DemonScript([
        {"on": "branch", "kind": "fixed", "value": rng.choice(("left", "right"))},
        {"on": "value", "kind": "fixed", "value": str(rng.randint(-3, 3))},
        {"on": "repeat", "kind": "fixed", "value": str(rng.randint(0, 2))},
        {"on": "duration", "kind": "fixed", "value": "1/2"},
    ], seed=0)


def run(g, init: dict, sa: DemonScript, sd: DemonScript):
    """Play with scripted players; returns (final snapshot, forfeiting player)."""
    angel = ScriptedStrategy(sa, Role.ANGEL)
    demon = ScriptedStrategy(sd, Role.DEMON)
    tr = play(g, angel, demon, State(dict(init)), K)
    snap = {x: iv for x, iv in tr.final_snapshot().items() if not S.is_primed(x)}
    return snap, (tr.forfeit or {}).get("player")


def _agree_off(rng, s: dict, keep) -> dict:
    """A state equal to s on ``keep`` and randomized elsewhere."""
    t = rand_state(rng)
    return {x: (s[x] if x in keep else t[x]) for x in s}


def _val(t, s: dict):
    return eval_term(t, State(dict(s)), K)


# ------------------------------------------------------------ coincidence

def coincidence_term(rng) -> str | None:
    t = rand_term(rng, 4)
    s1 = rand_state(rng)
    s2 = _agree_off(rng, s1, free_vars(t))
    if _val(t, s1) != _val(t, s2):
        return f"term {S.pretty(t)} differs on states agreeing on FV"
    return None


def coincidence_formula(rng) -> str | None:
    f = rand_fo(rng, 3)
    s1 = rand_state(rng)
    s2 = _agree_off(rng, s1, free_vars(f))
    if truth(f, State(dict(s1)), K) != truth(f, State(dict(s2)), K):
        return f"formula {S.pretty(S.resugar(f))} differs on states agreeing on FV"
    return None


def coincidence_game(rng) -> str | None:
    g = rand_game(rng, 4)
    sa, sd = _script(rng), _script(rng)
    s1 = rand_state(rng)
    s2 = _agree_off(rng, s1, free_vars(g))
    try:
        r1 = run(g, s1, sa, sd)
        r2 = run(g, s2, sa, sd)
    except EngineError:
        return None
    (f1, ff1), (f2, ff2) = r1, r2
    if ff1 != ff2:
        return f"game {S.pretty(g)}: forfeits differ"
    keep = set(free_vars(g)) & set(NAMES)
    if ff1 is None:
        keep |= set(must_bound_vars(g)) & set(NAMES)
    for x in keep:
        if f1[x] != f2[x]:
            return f"game {S.pretty(g)}: final {x} differs ({f1[x]} vs {f2[x]})"
    return None


# ----------------------------------------------------------- bound effect

def bound_effect(rng) -> str | None:
    g = rand_game(rng, 4)
    s = rand_state(rng)
    try:
        final, _ = run(g, s, _script(rng), _script(rng))
    except EngineError:
        return None
    bv = bound_vars(g)
    for x in NAMES:
        if x not in bv and final[x].lo != s[x]:
            return f"game {S.pretty(g)} changed {x} outside BV"
    if not must_bound_vars(g) <= bv:
        return f"game {S.pretty(g)}: MBV not within BV"
    return None


# --------------------------------------------------------------- renaming

def _swap_set(xs, x, y):
    return {y if v == x else x if v == y else v for v in xs}


def renaming(rng) -> str | None:
    x, y = rng.sample(NAMES + ("u",), 2)
    for e in (rand_term(rng, 4), rand_game(rng, 4), rand_formula(rng, 3)):
        r = rename(e, x, y)
        if rename(r, x, y) != e:
            return f"rename({x},{y}) is not an involution on {S.pretty(e)}"
        fv = {S.unprime(v) for v in free_vars(e)}
        rfv = {S.unprime(v) for v in free_vars(r)}
        if rfv != _swap_set(fv, x, y):
            return f"FV not transposed by rename({x},{y}) on {S.pretty(e)}"
        if isinstance(e, S.GAME_TYPES):
            bv = {S.unprime(v) for v in bound_vars(e)}
            rbv = {S.unprime(v) for v in bound_vars(r)}
            if rbv != _swap_set(bv, x, y):
                return f"BV not transposed by rename({x},{y}) on {S.pretty(e)}"
    return None


# ----------------------------------------------------------- substitution

def substitution(rng) -> tuple[str | None, bool]:
    """Returns (failure, admissible).  Checks that evaluating e(x->f) in s
    matches evaluating e in s with x set to the value of f."""
    x = rng.choice(NAMES)
    f = rand_term(rng, 2)
    s = rand_state(rng)
    fx = _val(f, s)
    s_x = {**s, x: fx.lo}
    kind = rng.choice(("term", "formula", "game"))
    e = {"term": lambda: rand_term(rng, 4), "formula": lambda: rand_fo(rng, 3),
         "game": lambda: rand_game(rng, 3)}[kind]()
    try:
        e2 = substitute(e, x, f)
    except AdmissibilityError:
        return None, False
    if kind == "term":
        ok = _val(e2, s) == _val(e, s_x)
    elif kind == "formula":
        ok = truth(e2, State(dict(s)), K) == truth(e, State(dict(s_x)), K)
    else:
        sa, sd = _script(rng), _script(rng)
        try:
            (f1, ff1) = run(e2, s, sa, sd)
            (f2, ff2) = run(e, s_x, sa, sd)
        except EngineError:
            return None, True
        ok = ff1 == ff2 and all(f1[v] == f2[v] for v in NAMES if v != x)
        if ok and x in must_bound_vars(e) and ff1 is None:
            ok = f1[x] == f2[x]
    if not ok:
        return (f"substitution {x}:={S.pretty(f)} in {kind} {S.pretty(e)} "
                "disagrees with the updated state"), True
    return None, True


CHECKS = (coincidence_term, coincidence_formula, coincidence_game,
          bound_effect, renaming)
