"""Strategy extraction and the big-step ``play`` interpreter.

``play`` walks the game itself.  At every decision it asks whichever
strategy currently sits in the Angel seat, and it tells the other one
what happened.  Dual swaps the seats.

An extracted strategy is a cursor over a checked proof.  It advances in
lockstep with the game.  It keeps its own valuation of the proof's
variables (``pstate``), which also holds ghosts, the old values saved by
renaming rules, and solution times.  Its decisions are terms from the
proof evaluated in that valuation.
"""

from __future__ import annotations

import enum
import json
import random
from dataclasses import dataclass, field
from fractions import Fraction

from . import syntax as S
from .creal import (DEFAULT_PRECISION, CReal, EvalError, Exact, Interval, Min,
                    Order, State, as_creal, cmp_creal, term_creal)
from .ode import (NotNilpotent, NotPolynomial, ODEError, ODESystem,
                  SampledSolution, check_solves, p_const, p_vars,
                  picard_solve, poly_from_term, poly_to_term, solve_nilpotent)
from .prover import CheckedNode, CheckResult
from .statics import bound_vars, substitute_many

DEFAULT_REPEAT_CAP = 10 ** 6
ODE_SAMPLES = 8


class EngineError(Exception):
    pass


class StrategyMismatch(EngineError):
    pass


class SolutionRejected(EngineError):
    pass


class NonTermination(EngineError):
    pass


class ScriptExhausted(EngineError):
    pass


class ExtractionUnsupported(EngineError):
    pass


class PreconditionFailed(EngineError):
    pass


class Role(enum.Enum):
    ANGEL = "Angel"
    DEMON = "Demon"


# ------------------------------------------------------------- truth values

def truth(f, s: State, k: int = DEFAULT_PRECISION, tolerant: bool = False):
    """Truth of a first-order formula at precision k.

    Returns True, False or None (undecided).  With ``tolerant`` a
    comparison counts as true unless it is false by more than 2**-k, so
    exact equalities between computable reals are accepted.
    """
    f = S.desugar(f)
    if isinstance(f, S.Cmp):
        try:
            d = term_creal(S.Plus(f.left, S.Neg(f.right)), s).refine(k + 2)
        except EvalError:
            return None
        slack = Fraction(1, 1 << k) if tolerant else Fraction(0)
        lo, hi, r = d.lo, d.hi, f.rel
        if r in (">", ">="):
            if lo > 0 or (r == ">=" and lo >= 0) or (tolerant and hi >= -slack):
                return True
            return False if (hi < 0 or (r == ">" and hi <= 0)) else None
        if r in ("<", "<="):
            if hi < 0 or (r == "<=" and hi <= 0) or (tolerant and lo <= slack):
                return True
            return False if (lo > 0 or (r == "<" and lo >= 0)) else None
        if r == "=":
            if lo == hi == 0 or (tolerant and lo <= slack and hi >= -slack):
                return True
            return False if (lo > 0 or hi < 0) else None
        if lo > 0 or hi < 0:
            return True
        return False if lo == hi == 0 else None
    m = S.match_and(f)
    if m:
        a, b = truth(m[0], s, k, tolerant), truth(m[1], s, k, tolerant)
        if a is False or b is False:
            return False
        return True if a and b else None
    m = S.match_or(f)
    if m:
        a, b = truth(m[0], s, k, tolerant), truth(m[1], s, k, tolerant)
        if a or b:
            return True
        return False if a is False and b is False else None
    if isinstance(f, S.Box) and isinstance(f.game, S.Test):
        a, b = truth(f.game.cond, s, k, tolerant), truth(f.post, s, k, tolerant)
        if a is False or b:
            return True
        return False if a and b is False else None
    return None


# ------------------------------------------------------------ strategies

class Strategy:
    """Decision procedure for one player.  Subclasses override the
    ``choose_*`` methods; ``observe`` reports the other player's moves."""

    role: Role = Role.ANGEL
    provenance: str = "scripted"

    def start(self, state: State, k: int):
        pass

    def enter(self, g, s: State):
        pass

    def exit(self, g, s: State):
        pass

    def choose_branch(self, g, s: State) -> int:
        raise StrategyMismatch(f"{self.describe()} cannot choose a branch")

    def choose_value(self, g, s: State):
        raise StrategyMismatch(f"{self.describe()} cannot choose a value")

    def choose_duration(self, g, s: State):
        raise StrategyMismatch(f"{self.describe()} cannot choose a duration")

    def choose_repeat(self, g, s: State, i: int) -> bool:
        raise StrategyMismatch(f"{self.describe()} cannot decide repetition")

    def observe(self, kind: str, g, value, s: State):
        pass

    def evidence(self, s: State, k: int) -> dict:
        return {"formula": "true", "holds": True, "certain": True}

    def describe(self) -> str:
        return f"{self.role.value} ({self.provenance})"


class IdleStrategy(Strategy):
    """A player with no decisions to make."""

    def __init__(self, role: Role = Role.ANGEL):
        self.role = role
        self.provenance = "idle"


# ----------------------------------------------------------- scripted play

_DECISIONS = ("duration", "value", "branch", "repeat")


@dataclass
class DemonScript:
    """Declarative responses.  Each rule answers one decision kind
    (optionally only for variable ``var``) with a fixed term, a seeded
    uniform draw from [lo, hi], or a table indexed by step."""
    decisions: list
    seed: int = 0
    name: str = "script"

    @staticmethod
    def from_json(data: dict, name: str = "script") -> "DemonScript":
        if not isinstance(data, dict) or not isinstance(data.get("decisions"), list):
            raise ValueError('script must be an object with a "decisions" list')
        for rule in data["decisions"]:
            if rule.get("on") not in _DECISIONS:
                raise ValueError(f"decision kind must be one of {_DECISIONS}")
            if rule.get("kind") not in ("fixed", "uniform", "table"):
                raise ValueError("rule kind must be fixed, uniform or table")
        return DemonScript(list(data["decisions"]), int(data.get("seed", 0)), name)

    def to_json(self) -> dict:
        return {"decisions": self.decisions, "seed": self.seed}

    @staticmethod
    def parse_spec(text: str, seed: int = 0) -> "DemonScript":
        """Shorthand ``fixed:TERM`` or ``uniform:LO,HI`` for ODE durations."""
        kind, _, rest = text.partition(":")
        if kind == "fixed":
            rule = {"on": "duration", "kind": "fixed", "value": rest}
        elif kind == "uniform":
            lo, _, hi = rest.partition(",")
            rule = {"on": "duration", "kind": "uniform", "lo": lo, "hi": hi}
        else:
            raise ValueError(f"unknown script shorthand {text!r}")
        return DemonScript([rule], seed, text)


class ScriptedStrategy(Strategy):
    def __init__(self, script: DemonScript, role: Role, env: dict | None = None):
        self.script, self.role, self.env = script, role, dict(env or {})
        self.provenance = f"scripted:{script.name}"
        self.start(State(), DEFAULT_PRECISION)

    def start(self, state, k):
        self.rng = random.Random(self.script.seed)
        self.used = [0] * len(self.script.decisions)
        self.k = k

    def _rule(self, kind: str, var: str | None):
        for i, rule in enumerate(self.script.decisions):
            if rule["on"] == kind and rule.get("var") in (None, var):
                return i, rule
        raise StrategyMismatch(f"{self.describe()} has no rule for {kind}"
                               + (f" of {var}" if var else ""))

    def _term(self, raw, s: State) -> CReal:
        t = S.parse(str(raw), "term", self.env)
        return term_creal(t, s)

    def _rational(self, raw, s: State) -> Fraction:
        c = self._term(raw, s)
        q = c.exact()
        return q if q is not None else c.refine(self.k + 8).mid

    def _draw(self, kind: str, var: str | None, s: State):
        i, rule = self._rule(kind, var)
        step = self.used[i]
        self.used[i] += 1
        if rule["kind"] == "fixed":
            return rule["value"], False
        if rule["kind"] == "table":
            vals = rule.get("values", [])
            if step >= len(vals):
                raise ScriptExhausted(f"{self.describe()}: table for {kind} "
                                      f"has {len(vals)} entries, step {step} requested")
            return vals[step], False
        lo, hi = self._rational(rule["lo"], s), self._rational(rule["hi"], s)
        u = Fraction(self.rng.getrandbits(32), 1 << 32)
        return lo + (hi - lo) * u, True

    def choose_duration(self, g, s):
        v, drawn = self._draw("duration", None, s)
        return Exact(v) if drawn else self._term(v, s)

    def choose_value(self, g, s):
        v, drawn = self._draw("value", g.var, s)
        return Exact(v) if drawn else self._term(v, s)

    def choose_branch(self, g, s):
        i, rule = self._rule("branch", None)
        if rule["kind"] == "uniform":
            self.used[i] += 1
            return self.rng.getrandbits(1)
        v, _ = self._draw("branch", None, s)
        if v in ("left", 0, "0"):
            return 0
        if v in ("right", 1, "1"):
            return 1
        raise StrategyMismatch(f"branch answer must be left or right, got {v!r}")

    def choose_repeat(self, g, s, i):
        idx, rule = self._rule("repeat", None)
        if rule["kind"] == "fixed":
            return i < int(rule["value"])
        if rule["kind"] == "uniform":
            self.used[idx] += 1
            return bool(self.rng.getrandbits(1))
        v, _ = self._draw("repeat", None, s)
        return bool(v)


def script_demon(script: DemonScript, env: dict | None = None) -> Strategy:
    return ScriptedStrategy(script, Role.DEMON, env)


def script_angel(script: DemonScript, env: dict | None = None) -> Strategy:
    return ScriptedStrategy(script, Role.ANGEL, env)


# ----------------------------------------------------------- extraction

@dataclass
class _Frame:
    depth: int
    kind: str
    node: CheckedNode
    snapshot: State
    renaming: list = field(default_factory=list)


@dataclass
class _Loop:
    node: CheckedNode
    depth: int


@dataclass
class _Semantic:
    """Stands for a postcondition established by an invariant rule."""
    formula: object


def _same_shape(a, b) -> bool:
    if type(a) is not type(b):
        return False
    match a:
        case S.Assign(x, _) | S.AssignAny(x):
            return x == b.var
        case S.Test():
            return True
        case S.ODE():
            return set(a.vars) <= set(b.vars) or set(b.vars) <= set(a.vars)
        case S.Choice(l, r) | S.Seq(l, r):
            return _same_shape(l, b.left) and _same_shape(r, b.right)
        case S.Repeat(x) | S.Dual(x):
            return _same_shape(x, b.body)
    return False


class ProofStrategy(Strategy):
    """Strategy read off a checked proof of ⟨α⟩φ (Angel) or [α]φ (Demon)."""

    def __init__(self, node: CheckedNode, assumptions=(), name: str = "proof"):
        goal = node.sequent.goal
        if not isinstance(goal, (S.Diamond, S.Box)):
            raise ExtractionUnsupported("proof does not conclude a modality")
        self.root = node
        self.assumptions = tuple(assumptions)
        self.role = Role.ANGEL if isinstance(goal, S.Diamond) else Role.DEMON
        self.provenance = f"extracted:{name}"
        self.game = goal.game
        self.post = goal.post
        self.start(State(), DEFAULT_PRECISION)

    # -- lifecycle
    def start(self, state: State, k: int):
        self.node = self.root
        self.pstate = state
        self.depth = 0
        self.frames: list = []
        self.loops: list = []
        self.k = k
        self.test_evidence: list = []

    def committed_branch(self):
        """Branch chosen for a top-level choice before play begins."""
        n = self.root
        while n.rule in (";I",):
            n = n.children[0]
        return {"<u>I1": 0, "<u>I2": 1}.get(n.rule)

    # -- helpers
    def _val(self, t) -> CReal:
        return term_creal(t, self.pstate)

    def _expect(self, n, *rules):
        if isinstance(n, _Semantic) or n.rule not in rules:
            got = "an invariant leaf" if isinstance(n, _Semantic) else n.rule
            raise ExtractionUnsupported(
                f"expected {' or '.join(rules)} at {getattr(n, 'path', '?')}, found {got}")
        return n

    def _sync(self, s: State):
        self.pstate = self.pstate.update(dict(s.items()))

    def _assign(self, n):
        self._expect(n, ":=I")
        a = n.sequent.goal.game
        val = self._val(a.term)
        if S.is_primed(a.var):
            self.pstate = self.pstate.set(a.var, val)
        else:
            y = n.payload["fresh"]
            self.pstate = self.pstate.update({y: self.pstate.get(a.var), a.var: val})
        return n.children[0]

    def _bind_any(self, n, value):
        self._expect(n, "[:*]I")
        x = n.sequent.goal.game.var
        y = n.payload["fresh"]
        self.pstate = self.pstate.update({y: self.pstate.get(x), x: as_creal(value)})
        return n.children[0]

    def _witness(self, n) -> CReal:
        self._expect(n, "<:*>I")
        return self._val(n.payload["witness"])

    def _normalize(self):
        while isinstance(self.node, CheckedNode):
            n = self.node
            if n.rule == "<:*>E":
                value = self._witness(n.children[0])
                inner = self._bind_any(n.children[1], value)
                self.node = self._expect(inner, "[?]I").children[0]
            elif n.rule == "M":
                self.frames.append(_Frame(self.depth + 1, "M", n.children[1],
                                          self.pstate, n.payload.get("renaming", [])))
                self.node = n.children[0]
            elif n.rule == "GV":
                self.frames.append(_Frame(self.depth + 1, "GV", n.children[0], self.pstate))
                self.node = n.children[1]
            elif n.rule in ("[u]E1", "[u]E2"):
                inner = self._expect(n.children[0], "[u]I")
                self.node = inner.children[0 if n.rule == "[u]E1" else 1]
            else:
                return

    # -- game traversal
    def enter(self, g, s):
        self._normalize()
        self.depth += 1
        n = self.node
        if isinstance(n, _Semantic):
            raise ExtractionUnsupported("play continues past an invariant leaf")
        goal = n.sequent.goal
        if not isinstance(goal, (S.Diamond, S.Box)) or not _same_shape(goal.game, g):
            raise StrategyMismatch(
                f"proof at {n.path} expects {_label(goal.game) if isinstance(goal, (S.Diamond, S.Box)) else 'no game'}"
                f" but the game plays {_label(g)}")
        dia = isinstance(goal, S.Diamond)
        match g:
            case S.Seq():
                self.node = self._expect(n, ";I").children[0]
            case S.Dual():
                self.node = self._expect(n, "^dI").children[0]
            case S.Choice():
                if dia:
                    self._expect(n, "<u>I1", "<u>I2")
            case S.Repeat():
                if goal.game != g:
                    raise ExtractionUnsupported(
                        "loop proofs are replayed against the live state only when the "
                        "proof's loop is the game's loop")
                self.loops.append(_Loop(n, self.depth))
            case S.AssignAny():
                self._expect(n, "<:*>I" if dia else "[:*]I")
            case S.Assign():
                self.node = self._assign(n)
            case S.Test():
                if dia:
                    self._expect(n, "<?>I")
                    self.test_evidence.append(
                        {"path": n.path, "holds": truth(g.cond, s, self.k, tolerant=True)})
                    self.node = n.children[1]
                else:
                    self.node = self._expect(n, "[?]I").children[0]
            case S.ODE():
                self._expect(n, *(("dsolve", "DV") if dia else
                                  ("bsolve", "DI", "DC", "DW", "DG")))

    def exit(self, g, s):
        self.depth -= 1
        if isinstance(g, S.Repeat) and self.loops and self.loops[-1].depth == self.depth + 1:
            self.loops.pop()
        while self.frames and self.frames[-1].depth == self.depth + 1:
            fr = self.frames.pop()
            if fr.kind == "M":
                self.pstate = self.pstate.update(
                    {z: fr.snapshot.get(v) for v, z in fr.renaming})
            else:
                self.pstate = fr.snapshot
            self.node = fr.node

    # -- decisions
    def choose_branch(self, g, s):
        n = self.node
        b = 0 if n.rule == "<u>I1" else 1
        self.node = n.children[0]
        return b

    def choose_value(self, g, s):
        n = self.node
        value = self._witness(n)
        self.node = self._assign(n.children[0])
        return value

    def choose_duration(self, g, s):
        n = self.node
        if n.rule == "DV":
            return self._val(n.payload["d"])
        c = n.children[0]
        value = self._witness(c)
        c = self._assign(c.children[0])
        c = self._expect(c, "<?>I").children[1]
        self.node = self._expect(c, "<?>I").children[1]
        return value

    def _repeat_node(self, g):
        n = self.node
        if (isinstance(n, CheckedNode) and isinstance(n.sequent.goal, (S.Diamond, S.Box))
                and n.sequent.goal.game == g
                and n.rule in ("<*>I", "<*>S", "<*>G", "loop", "[*]R")):
            return n
        if not self.loops:
            raise StrategyMismatch("repetition decision outside a loop")
        return self.loops[-1].node

    def choose_repeat(self, g, s, i):
        n = self._repeat_node(g)
        if n.rule == "<*>S":
            self.node = n.children[0]
            return False
        if n.rule == "<*>G":
            self.node = n.children[0]
            return True
        self._expect(n, "<*>I")
        self._sync(s)
        metric, zero = n.payload["metric"], n.payload.get("zero", S.lit(0))
        ms = list(metric.items) if isinstance(metric, S.Tuple) else [metric]
        zs = (list(zero.items) if isinstance(zero, S.Tuple) else [zero] * len(ms))
        vals = [self._val(m) for m in ms]
        eps = Fraction(1, 1 << self.k)
        go = any(cmp_creal(v, self._val(z), eps) is Order.GT for v, z in zip(vals, zs))
        if go:
            self.pstate = self.pstate.update(dict(zip(n.payload["ghosts"], vals)))
            self.node = n.children[1]
        else:
            self.node = n.children[2]
        return go

    # -- observations
    def observe(self, kind, g, value, s):
        n = self.node
        if kind == "branch":
            self.node = self._expect(n, "[u]I").children[value]
        elif kind == "value":
            self.node = self._bind_any(n, value)
        elif kind == "repeat":
            n = self._repeat_node(g)
            if n.rule == "loop":
                self._sync(s)
                self.node = n.children[1 if value else 2]
            else:
                c = self._expect(self._expect(n, "[*]R").children[0], "<?>I")
                self.node = c.children[1 if value else 0]
        elif kind == "duration":
            self._after_box_ode(n, value, s)
        elif kind == "evolved" and isinstance(n, CheckedNode) and n.rule == "DV":
            self._sync(s)
            self.node = n.children[2]

    def _after_box_ode(self, n, d, s):
        while True:
            self._expect(n, "bsolve", "DI", "DC", "DW", "DG")
            if n.rule == "DC":
                n = n.children[1]
            elif n.rule == "DG":
                c = self._expect(n.children[0], "<:*>I")
                self.pstate = self.pstate.set(n.payload["ghost"], self._witness(c))
                n = self._assign(c.children[0])
            elif n.rule == "bsolve":
                c = self._bind_any(n.children[0], d)
                c = self._expect(c, "[?]I").children[0]
                self.node = self._expect(c, "[?]I").children[0]
                return
            else:
                self._sync(s)
                self.node = _Semantic(n.sequent.goal.post)
                return

    def evidence(self, s, k):
        n = self.node
        f = n.formula if isinstance(n, _Semantic) else n.sequent.goal
        if isinstance(n, _Semantic):
            self._sync(s)
        return {"formula": S.pretty(S.resugar(f)),
                "holds": truth(f, self.pstate, k, tolerant=True),
                "certain": truth(f, self.pstate, k) is True}


def extract(proof, name: str = "proof") -> ProofStrategy:
    """Strategy from a checked proof.  Leading implication introductions
    become assumptions that ``play`` checks against the initial state."""
    if isinstance(proof, CheckResult):
        if not proof.ok:
            raise ExtractionUnsupported(f"proof did not check: {proof.verdict}")
        proof = proof.tree
    node, assumptions = proof, []
    while node.rule == "[?]I" and node.sequent.goal.game is not None \
            and isinstance(node.sequent.goal.game, S.Test) \
            and isinstance(node.sequent.goal.post, (S.Diamond, S.Box)):
        assumptions.append(node.sequent.goal.game.cond)
        node = node.children[0]
    return ProofStrategy(node, assumptions, name)


# ----------------------------------------------------------------- play

@dataclass
class PlayTrace:
    events: list
    final: State
    evidence: dict
    k: int
    forfeit: dict | None = None

    def final_snapshot(self) -> dict:
        return self.final.snapshot(self.k)

    def to_json(self) -> dict:
        return {"events": self.events,
                "final": {x: iv.to_json() for x, iv in self.final_snapshot().items()},
                "evidence": self.evidence,
                "forfeit": self.forfeit,
                "precision": self.k}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True)


class _Forfeit(Exception):
    def __init__(self, player: str, construct: str, state: State):
        self.player, self.construct, self.state = player, construct, state


@dataclass
class _Seat:
    strategy: Strategy
    label: str


class _Player:
    def __init__(self, angel: Strategy, demon: Strategy, k: int, cap: int,
                 tol, grid: int):
        self.seats = (_Seat(angel, "Angel"), _Seat(demon, "Demon"))
        self.k, self.cap, self.tol, self.grid = k, cap, tol, grid
        self.events: list = []

    def event(self, construct, decider, choice, s: State, **extra):
        ev = {"step": len(self.events), "construct": construct,
              "decider": decider, "choice": choice,
              "state": {x: iv.to_json() for x, iv in s.snapshot(self.k).items()}}
        ev.update(extra)
        self.events.append(ev)

    def seat_check(self, seat: _Seat, dual: int):
        expected = Role.ANGEL if dual % 2 == 0 else Role.DEMON
        if seat.strategy.role is not expected:
            raise StrategyMismatch(
                f"{seat.strategy.describe()} asked to decide "
                f"{'outside' if dual % 2 == 0 else 'inside'} a dual game")

    def run(self, g, s: State, a: _Seat, d: _Seat, dual: int) -> State:
        if isinstance(g, (S.DChoice, S.DRepeat)):
            g = S.desugar(g)
        for p in (a, d):
            p.strategy.enter(g, s)
        match g:
            case S.Assign(x, f):
                s = s.set(x, term_creal(f, s))
                self.event(_label(g), None, None, s)
            case S.AssignAny(x):
                self.seat_check(a, dual)
                v = as_creal(a.strategy.choose_value(g, s))
                d.strategy.observe("value", g, v, s)
                s = s.set(x, v)
                self.event(_label(g), a.label, _show(v, self.k), s)
            case S.Test(c):
                holds = truth(c, s, self.k, tolerant=True)
                self.event(_label(g), a.label, holds, s)
                if holds is False:
                    raise _Forfeit(a.label, _label(g), s)
                d.strategy.observe("test", g, holds, s)
            case S.ODE():
                self.seat_check(a, dual)
                dur = as_creal(a.strategy.choose_duration(g, s))
                clip = not isinstance(a.strategy, ProofStrategy)
                s2, dur, rows = self.evolve(g, s, dur, clip, a.label)
                d.strategy.observe("duration", g, dur, s2)
                a.strategy.observe("evolved", g, dur, s2)
                s = s2
                self.event(_label(g), a.label, _show(dur, self.k), s, samples=rows)
            case S.Choice(l, r):
                self.seat_check(a, dual)
                b = a.strategy.choose_branch(g, s)
                d.strategy.observe("branch", g, b, s)
                self.event("choice", a.label, "left" if b == 0 else "right", s)
                s = self.run(l if b == 0 else r, s, a, d, dual)
            case S.Seq(l, r):
                s = self.run(l, s, a, d, dual)
                s = self.run(r, s, a, d, dual)
            case S.Repeat(body):
                i = 0
                while True:
                    self.seat_check(a, dual)
                    go = a.strategy.choose_repeat(g, s, i)
                    d.strategy.observe("repeat", g, go, s)
                    self.event("repeat", a.label, "go" if go else "stop", s, iteration=i)
                    if not go:
                        break
                    if i >= self.cap:
                        raise NonTermination(f"repetition exceeded {self.cap} iterations")
                    s = self.run(body, s, a, d, dual)
                    i += 1
            case S.Dual(body):
                s = self.run(body, s, d, a, dual + 1)
            case _:
                raise TypeError(f"not a game: {g!r}")
        for p in (a, d):
            p.strategy.exit(g, s)
        return s

    # -- continuous evolution
    def evolve(self, g: S.ODE, s: State, dur: CReal, clip: bool, who: str):
        sys = ODESystem.of(g)
        try:
            sol = solve_nilpotent(sys)
        except NotNilpotent:
            sol = None
        if dur.refine(self.k).hi < 0:
            raise SolutionRejected(f"negative duration for {_label(g)}")
        if truth(g.domain, s, self.k, tolerant=True) is False:
            raise _Forfeit(who, _label(g), s)
        if clip:
            dur = self.clip(g, sys, sol, s, dur)
        if sol is None:
            dq = dur.exact()
            dq = dq if dq is not None else dur.refine(self.k + 8).mid
            try:
                sol = picard_solve(sys, s, dq, self.k)
            except ODEError as err:
                raise SolutionRejected(str(err)) from None
            dur = Exact(dq)
            at = lambda t: sol.state_at(s, t)  # noqa: E731
        else:
            at = lambda t: sol.state_at(s, t)  # noqa: E731
        if not check_solves(sol, s, dur, sys, self.tol, self.grid, self.k):
            raise SolutionRejected(f"solution of {_label(g)} failed validation")
        rows = []
        dq = dur.refine(self.k).lo if dur.exact() is None else dur.exact()
        for i in range(1, ODE_SAMPLES):
            st = at(dq * i / ODE_SAMPLES)
            if truth(g.domain, st, self.k, tolerant=True) is False:
                raise SolutionRejected(f"domain of {_label(g)} violated at "
                                       f"time {dq * i / ODE_SAMPLES}")
            rows.append({"time": str(dq * i / ODE_SAMPLES),
                         **{x: st.get(x).refine(self.k).to_json() for x in sys.vars}})
        s2 = at(dur)
        if truth(g.domain, s2, self.k, tolerant=True) is False:
            raise SolutionRejected(f"domain of {_label(g)} violated at the end")
        return s2, dur, rows

    def clip(self, g, sys, sol, s: State, dur: CReal) -> CReal:
        """Shorten a scripted duration so the domain holds throughout:
        exact roots for conditions linear in time, bisection otherwise."""
        tau = "__tau"
        for atom in S.conjuncts(S.desugar(g.domain)):
            if not isinstance(atom, S.Cmp) or atom.rel in ("=", "!="):
                continue
            q = (S.Plus(atom.left, S.Neg(atom.right)) if atom.rel in (">", ">=")
                 else S.Plus(atom.right, S.Neg(atom.left)))
            root = None
            if sol is not None:
                root = _linear_root(substitute_many(q, sol.terms(S.Var(tau))), tau, s, self.k)
            if root is not None:
                if root.refine(self.k).lo < dur.refine(self.k).hi:
                    dur = Min(dur, root)
                continue
            dur = self._bisect_clip(atom, sol, sys, s, dur)
        return dur

    def _bisect_clip(self, atom, sol, sys, s, dur):
        def state_at(t):
            if sol is not None:
                return sol.state_at(s, t)
            return picard_solve(sys, s, t, self.k).state_at(s, t)
        dq = dur.refine(self.k).lo
        grid = [dq * i / self.grid for i in range(self.grid + 1)]
        prev = Fraction(0)
        for t in grid[1:]:
            if truth(atom, state_at(t), self.k, tolerant=True) is False:
                lo, hi = prev, t
                while hi - lo > Fraction(1, 1 << self.k):
                    mid = (lo + hi) / 2
                    if truth(atom, state_at(mid), self.k, tolerant=True) is False:
                        hi = mid
                    else:
                        lo = mid
                return Exact(lo)
            prev = t
        return dur


def _linear_root(q, tau: str, s: State, k: int):
    """Time at which q(tau) = c0 + c1*tau reaches zero from above, when q
    is linear in tau with certified negative slope."""
    try:
        p = poly_from_term(q)
    except NotPolynomial:
        return None
    c0, c1 = {}, {}
    for mono, c in p.items():
        power = dict(mono).get(tau, 0)
        rest = tuple((v, e) for v, e in mono if v != tau)
        if power == 0:
            c0[rest] = c0.get(rest, 0) + c
        elif power == 1:
            c1[rest] = c1.get(rest, 0) + c
        else:
            return None
    if not c1:
        return None
    v0 = term_creal(poly_to_term(c0) if c0 else S.lit(0), s)
    v1 = term_creal(poly_to_term(c1), s)
    if v1.refine(k).hi >= 0:
        return None
    return -(v0 / v1)


def _label(g) -> str:
    return S.pretty(S.resugar(g))


def _show(v: CReal, k: int):
    q = v.exact()
    return str(q) if q is not None else v.refine(k).to_json()


def play(g, angel: Strategy, demon: Strategy, s: State,
         k: int = DEFAULT_PRECISION, repeat_cap: int = DEFAULT_REPEAT_CAP,
         tol=Fraction(1, 1 << 20), grid: int = 128, demon_post=None) -> PlayTrace:
    """Play game ``g`` from state ``s`` with ``angel`` in the Angel seat."""
    g = S.desugar(g)
    for strat in (angel, demon):
        strat.start(s, k)
    for strat in (angel, demon):
        for a in getattr(strat, "assumptions", ()):
            if truth(a, s, k, tolerant=True) is not True:
                raise PreconditionFailed(f"assumption {S.pretty(S.resugar(a))} "
                                         "does not hold in the initial state")
    runner = _Player(angel, demon, k, repeat_cap, tol, grid)
    forfeit = None
    try:
        final = runner.run(g, s, runner.seats[0], runner.seats[1], 0)
    except _Forfeit as f:
        final = f.state
        forfeit = {"player": f.player, "construct": f.construct}
    if forfeit is None:
        evidence = {"Angel": angel.evidence(final, k), "Demon": demon.evidence(final, k)}
        if demon_post is not None:
            evidence["Demon"] = {"formula": S.pretty(demon_post),
                                 "holds": truth(demon_post, final, k, tolerant=True),
                                 "certain": truth(demon_post, final, k) is True}
    else:
        loser = forfeit["player"]
        winner = "Demon" if loser == "Angel" else "Angel"
        evidence = {winner: {"formula": "opponent forfeited", "holds": True,
                             "certain": True},
                    loser: {"formula": "forfeited", "holds": False, "certain": True}}
    return PlayTrace(runner.events, final, evidence, k, forfeit)
