"""Natural-deduction proof checker.

A proof is a tree of rule applications.  ``apply_rule`` maps a goal
sequent and a rule instance to its premise sequents; ``check`` walks a
proof tree through that table and routes first-order leaves to the
arithmetic oracle ``discharge_arith``.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from fractions import Fraction

from . import syntax as S
from .creal import EvalError, Interval, State, eval_term
from .ode import (NonDifferentiable, NotNilpotent, ODESystem,
                  expand_differentials, solve_nilpotent)
from .statics import (AdmissibilityError, all_vars, bound_vars, free_vars,
                      fresh_name, rename, substitute, substitute_many)


class RuleError(Exception):
    pass


# ---------------------------------------------------------------- sequents

@dataclass(frozen=True)
class Sequent:
    ctx: tuple
    goal: object

    def __post_init__(self):
        object.__setattr__(self, "ctx", tuple(S.desugar(f) for f in self.ctx))
        object.__setattr__(self, "goal", S.desugar(self.goal))

    def with_ctx(self, *extra) -> "Sequent":
        return Sequent(self.ctx + tuple(extra), self.goal)

    def names(self) -> frozenset:
        out = all_vars(self.goal)
        for f in self.ctx:
            out |= all_vars(f)
        return out

    def render(self) -> str:
        left = ", ".join(S.pretty(S.resugar(f)) for f in self.ctx)
        return f"{left} |- {S.pretty(S.resugar(self.goal))}"

    def __str__(self):
        return self.render()


def seq(ctx, goal) -> Sequent:
    return Sequent(tuple(ctx), goal)


# ---------------------------------------------------------- proof terms

@dataclass
class ProofTerm:
    rule: str
    payload: dict = field(default_factory=dict)
    children: list = field(default_factory=list)
    line: int = 0

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)


# display names for the ASCII rule tokens
DISPLAY = {
    "[u]I": "[∪]I", "[u]E1": "[∪]E1", "[u]E2": "[∪]E2",
    "<u>I1": "⟨∪⟩I1", "<u>I2": "⟨∪⟩I2", "<u>E": "⟨∪⟩E",
    "<?>I": "⟨?⟩I", "<?>E1": "⟨?⟩E1", "<?>E2": "⟨?⟩E2",
    "[?]I": "[?]I", "[?]E": "[?]E", "hyp": "hyp",
    "[:*]I": "[:*]I", "<:*>I": "⟨:*⟩I", "[:*]E": "[:*]E", "<:*>E": "⟨:*⟩E",
    ";I": "⟨;⟩I", ":=I": "⟨:=⟩I", "M": "M", "^dI": "⟨d⟩I",
    "<*>E": "⟨*⟩E", "[*]E": "[*]E", "<*>S": "⟨*⟩S", "[*]R": "[*]R",
    "<*>G": "⟨*⟩G", "loop": "loop", "FP": "FP", "<*>I": "⟨*⟩I",
    "DI": "DI", "DC": "DC", "DW": "DW", "DG": "DG", "DV": "DV",
    "bsolve": "bsolve", "dsolve": "dsolve", "GV": "GV", "arith": "arith",
}
_ALIASES = {
    "[∪]I": "[u]I", "[∪]E1": "[u]E1", "[∪]E2": "[u]E2", "⟨∪⟩I1": "<u>I1",
    "⟨∪⟩I2": "<u>I2", "⟨∪⟩E": "<u>E", "⟨?⟩I": "<?>I", "⟨?⟩E1": "<?>E1",
    "⟨?⟩E2": "<?>E2", "⟨:*⟩I": "<:*>I", "⟨:*⟩E": "<:*>E", "⟨;⟩I": ";I",
    "[;]I": ";I", "<;>I": ";I", "⟨:=⟩I": ":=I", "[:=]I": ":=I",
    "<:=>I": ":=I", "⟨d⟩I": "^dI", "dI": "^dI", "⟨*⟩E": "<*>E",
    "⟨*⟩S": "<*>S", "⟨*⟩G": "<*>G", "⟨*⟩I": "<*>I", "FO": "arith",
}


def canonical_rule(name: str) -> str:
    return _ALIASES.get(name, name)


# ------------------------------------------------------------ helpers

def _modality(f):
    if isinstance(f, (S.Diamond, S.Box)):
        return type(f), f.game, f.post
    raise RuleError(f"goal is not a modality: {S.pretty(S.resugar(f))}")


def _need(cond: bool, msg: str):
    if not cond:
        raise RuleError(msg)


def _fresh_check(name: str, avoid, what: str = "variable"):
    _need(isinstance(name, str) and name and not S.is_primed(name),
          f"fresh {what} must be a plain name")
    _need(name not in avoid and S.prime(name) not in avoid,
          f"{what} {name} is not fresh")


def _pick_fresh(payload: dict, key: str, base: str, avoid) -> str:
    name = payload.get(key)
    if name is None:
        name = fresh_name(base, avoid)
        payload[key] = name
    _fresh_check(name, avoid)
    return name


def _payload_names(payload: dict) -> frozenset:
    out = frozenset()
    for v in payload.values():
        if isinstance(v, (S.TERM_TYPES + S.FORMULA_TYPES + S.GAME_TYPES)):
            out |= all_vars(v)
    return out


def _term(payload, key):
    v = payload.get(key)
    _need(v is not None, f"missing payload :{key}")
    _need(isinstance(v, S.TERM_TYPES), f"payload :{key} must be a term")
    return v


def _formula(payload, key, default=None):
    v = payload.get(key, default)
    _need(v is not None, f"missing payload :{key}")
    _need(isinstance(v, S.FORMULA_TYPES), f"payload :{key} must be a formula")
    return S.desugar(v)


def _game(payload, key):
    v = payload.get(key)
    _need(v is not None, f"missing payload :{key}")
    _need(isinstance(v, S.GAME_TYPES), f"payload :{key} must be a game")
    return S.desugar(v)


def _subst(f, sigma):
    try:
        return substitute_many(f, sigma)
    except AdmissibilityError as err:
        raise RuleError(f"AdmissibilityError: {err}") from None


# ------------------------------------------------------- rule functions
#
# Each takes (sequent, payload) and returns the premise sequents.

def r_box_choice_I(sq, pl):
    m, g, p = _modality(sq.goal)
    _need(m is S.Box and isinstance(g, S.Choice), "[∪]I needs [α∪β]φ")
    return [Sequent(sq.ctx, S.Box(g.left, p)), Sequent(sq.ctx, S.Box(g.right, p))]


def _box_choice_E(side):
    def rule(sq, pl):
        m, g, p = _modality(sq.goal)
        _need(m is S.Box, "[∪]E concludes a box modality")
        other = _game(pl, "other")
        whole = S.Choice(g, other) if side == 1 else S.Choice(other, g)
        return [Sequent(sq.ctx, S.Box(whole, p))]
    return rule


def _dia_choice_I(side):
    def rule(sq, pl):
        m, g, p = _modality(sq.goal)
        _need(m is S.Diamond and isinstance(g, S.Choice), "⟨∪⟩I needs ⟨α∪β⟩φ")
        return [Sequent(sq.ctx, S.Diamond(g.left if side == 1 else g.right, p))]
    return rule


def r_dia_choice_E(sq, pl):
    on = _formula(pl, "on")
    _need(isinstance(on, S.Diamond) and isinstance(on.game, S.Choice),
          "⟨∪⟩E eliminates a formula ⟨α∪β⟩φ")
    a, b, phi = on.game.left, on.game.right, on.post
    return [Sequent(sq.ctx, on),
            sq.with_ctx(S.Diamond(a, phi)),
            sq.with_ctx(S.Diamond(b, phi))]


def r_dia_test_I(sq, pl):
    m, g, p = _modality(sq.goal)
    _need(m is S.Diamond and isinstance(g, S.Test), "⟨?⟩I needs ⟨?φ⟩ψ")
    return [Sequent(sq.ctx, g.cond), Sequent(sq.ctx, p)]


def r_dia_test_E1(sq, pl):
    psi = _formula(pl, "with")
    return [Sequent(sq.ctx, S.Diamond(S.Test(sq.goal), psi))]


def r_dia_test_E2(sq, pl):
    phi = _formula(pl, "with")
    return [Sequent(sq.ctx, S.Diamond(S.Test(phi), sq.goal))]


def r_box_test_I(sq, pl):
    m, g, p = _modality(sq.goal)
    _need(m is S.Box and isinstance(g, S.Test), "[?]I needs [?φ]ψ")
    return [Sequent(sq.ctx + (g.cond,), p)]


def r_box_test_E(sq, pl):
    phi = _formula(pl, "with")
    return [Sequent(sq.ctx, S.Box(S.Test(phi), sq.goal)), Sequent(sq.ctx, phi)]


def r_hyp(sq, pl):
    idx = pl.get("index")
    if idx is not None:
        idx = int(idx)
        _need(0 <= idx < len(sq.ctx), f"hyp index {idx} out of range")
        _need(sq.ctx[idx] == sq.goal, f"hypothesis {idx} does not match goal")
    else:
        _need(sq.goal in sq.ctx, "goal is not among the hypotheses")
        pl["index"] = sq.ctx.index(sq.goal)
    return []


def r_box_any_I(sq, pl):
    m, g, p = _modality(sq.goal)
    _need(m is S.Box and isinstance(g, S.AssignAny), "[:*]I needs [x:=*]φ")
    x = g.var
    y = _pick_fresh(pl, "fresh", x, sq.names())
    return [Sequent(tuple(rename(f, x, y) for f in sq.ctx), p)]


def r_dia_any_I(sq, pl):
    m, g, p = _modality(sq.goal)
    _need(m is S.Diamond and isinstance(g, S.AssignAny), "⟨:*⟩I needs ⟨x:=*⟩φ")
    f = _term(pl, "witness")
    _need(not any(S.is_primed(v) for v in free_vars(f)) or S.is_primed(g.var),
          "witness mentions primed variables")
    _subst(p, {g.var: f})       # admissibility of φ(x↦f)
    return [Sequent(sq.ctx, S.Diamond(S.Assign(g.var, f), p))]


def r_box_any_E(sq, pl):
    on = _formula(pl, "on")
    _need(isinstance(on, S.Box) and isinstance(on.game, S.AssignAny),
          "[:*]E eliminates a formula [x:=*]φ")
    f = _term(pl, "term")
    inst = _subst(on.post, {on.game.var: f})
    _need(inst == sq.goal, "instance φ(x↦f) does not match the goal")
    return [Sequent(sq.ctx, on)]


def r_dia_any_E(sq, pl):
    on = _formula(pl, "on")
    _need(isinstance(on, S.Diamond) and isinstance(on.game, S.AssignAny),
          "⟨:*⟩E eliminates a formula ⟨x:=*⟩φ")
    x = on.game.var
    _need(x not in free_vars(sq.goal), f"{x} is free in the conclusion")
    return [Sequent(sq.ctx, on),
            Sequent(sq.ctx, S.c_forall(x, S.c_implies(on.post, sq.goal)))]


def r_seq_I(sq, pl):
    m, g, p = _modality(sq.goal)
    _need(isinstance(g, S.Seq), "⟨;⟩I needs a sequential game")
    return [Sequent(sq.ctx, m(g.left, m(g.right, p)))]


def r_assign_I(sq, pl):
    m, g, p = _modality(sq.goal)
    _need(isinstance(g, S.Assign), "⟨:=⟩I needs an assignment")
    x, f = g.var, g.term
    if S.is_primed(x):
        # differential assignment: primes never occur in renamed contexts
        _need(all(x not in free_vars(c) for c in sq.ctx),
              f"{x} is free in the context")
        _need(x not in free_vars(f), f"{x} occurs in its own right-hand side")
        return [Sequent(sq.ctx + (S.Cmp(S.PrimedVar(S.unprime(x)), "=", f),), p)]
    y = _pick_fresh(pl, "fresh", x, sq.names() | all_vars(f))
    ctx = tuple(rename(c, x, y) for c in sq.ctx)
    eq = S.Cmp(S.Var(x), "=", rename(f, x, y))
    return [Sequent(ctx + (eq,), p)]


def _renaming_for(game, avoid) -> list:
    pairs = []
    used = set(avoid)
    for v in sorted({S.unprime(b) for b in bound_vars(game)}):
        z = fresh_name("z", used)
        used.add(z)
        pairs.append((v, z))
    return pairs


def r_mono(sq, pl):
    m, g, p = _modality(sq.goal)
    mid = _formula(pl, "mid")
    avoid = sq.names() | all_vars(mid)
    pairs = _renaming_for(g, avoid)
    ctx = sq.ctx
    for v, z in pairs:
        ctx = tuple(rename(c, v, z) for c in ctx)
    pl["renaming"] = pairs
    return [Sequent(sq.ctx, m(g, mid)), Sequent(ctx + (mid,), p)]


def r_dual_I(sq, pl):
    m, g, p = _modality(sq.goal)
    _need(isinstance(g, S.Dual), "⟨d⟩I needs a dual game")
    other = S.Box if m is S.Diamond else S.Diamond
    return [Sequent(sq.ctx, other(g.body, p))]


def r_dia_rep_E(sq, pl):
    on = _formula(pl, "on")
    _need(isinstance(on, S.Diamond) and isinstance(on.game, S.Repeat),
          "⟨*⟩E eliminates a formula ⟨α*⟩φ")
    a, phi = on.game.body, on.post
    return [Sequent(sq.ctx, on), sq.with_ctx(phi),
            sq.with_ctx(S.Diamond(a, on))]


def r_box_rep_E(sq, pl):
    m = S.match_and(sq.goal)
    _need(m is not None, "[*]E concludes φ ∧ [α][α*]φ")
    phi, rest = m
    _need(isinstance(rest, S.Box) and isinstance(rest.post, S.Box)
          and isinstance(rest.post.game, S.Repeat)
          and rest.post.game.body == rest.game and rest.post.post == phi,
          "[*]E concludes φ ∧ [α][α*]φ")
    return [Sequent(sq.ctx, rest.post)]


def r_dia_rep_S(sq, pl):
    m, g, p = _modality(sq.goal)
    _need(m is S.Diamond and isinstance(g, S.Repeat), "⟨*⟩S needs ⟨α*⟩φ")
    return [Sequent(sq.ctx, p)]


def r_dia_rep_G(sq, pl):
    m, g, p = _modality(sq.goal)
    _need(m is S.Diamond and isinstance(g, S.Repeat), "⟨*⟩G needs ⟨α*⟩φ")
    return [Sequent(sq.ctx, S.Diamond(g.body, sq.goal))]


def r_box_rep_R(sq, pl):
    m, g, p = _modality(sq.goal)
    _need(m is S.Box and isinstance(g, S.Repeat), "[*]R needs [α*]φ")
    return [Sequent(sq.ctx, S.c_and(p, S.Box(g.body, sq.goal)))]


def r_loop(sq, pl):
    m, g, p = _modality(sq.goal)
    _need(m is S.Box and isinstance(g, S.Repeat), "loop needs [α*]φ")
    j = _formula(pl, "inv")
    return [Sequent(sq.ctx, j), Sequent((j,), S.Box(g.body, j)), Sequent((j,), p)]


def r_fp(sq, pl):
    on = _formula(pl, "on")
    _need(isinstance(on, S.Diamond) and isinstance(on.game, S.Repeat),
          "FP eliminates a formula ⟨α*⟩φ")
    psi = sq.goal
    return [Sequent(sq.ctx, on), Sequent((on.post,), psi),
            Sequent((S.Diamond(on.game.body, psi),), psi)]


def _certify_positive(t, what: str):
    _need(not free_vars(t), f"{what} must be a constant term")
    try:
        iv = eval_term(t, State(), 64)
    except EvalError as err:
        raise RuleError(f"{what} cannot be evaluated: {err}") from None
    _need(iv.lo > 0, f"{what} must be positive, got {iv}")


def convergence_formulas(metric, zero, delta, ghosts):
    """(M ≻ 0, M0 = M, descent M0 ≻ M, stop 0 ≽ M) for a scalar or
    lexicographic tuple metric with margin delta."""
    if isinstance(metric, S.Tuple):
        ms = list(metric.items)
        zs = list(zero.items) if isinstance(zero, S.Tuple) else [zero] * len(ms)
        _need(len(zs) == len(ms), "metric and zero have different lengths")
        g0 = [S.Var(n) for n in ghosts]
        pos = S.c_any(S.Cmp(m, ">", z) for m, z in zip(ms, zs))
        eq = S.c_all(S.Cmp(g, "=", m) for g, m in zip(g0, ms))
        downs = []
        for i in range(len(ms)):
            parts = [S.Cmp(g0[j], ">=", ms[j]) for j in range(i)]
            parts.append(S.Cmp(g0[i], ">=", S.Plus(ms[i], delta)))
            parts.append(S.Cmp(g0[i], ">", zs[i]))
            downs.append(S.c_all(parts))
        desc = S.c_any(downs)
        stop = S.c_all(S.Cmp(z, ">=", m) for m, z in zip(ms, zs))
        return pos, eq, desc, stop
    g0 = S.Var(ghosts[0])
    return (S.Cmp(metric, ">", zero), S.Cmp(g0, "=", metric),
            S.Cmp(g0, ">=", S.Plus(metric, delta)), S.Cmp(zero, ">=", metric))


def r_dia_rep_I(sq, pl):
    m, g, p = _modality(sq.goal)
    _need(m is S.Diamond and isinstance(g, S.Repeat), "⟨*⟩I needs ⟨α*⟩φ")
    inv = _formula(pl, "inv")
    metric = _term(pl, "metric")
    zero = pl.get("zero", S.lit(0))
    delta = _term(pl, "delta")
    _need(not any(S.is_primed(v) for v in free_vars(metric)),
          "metric mentions primed variables")
    _certify_positive(delta, "descent margin δ")
    _need(not (free_vars(zero) & bound_vars(g.body)),
          "zero element depends on variables bound by the loop body")
    avoid = sq.names() | _payload_names(pl)
    base = pl.get("ghost")
    if base is None:
        base = fresh_name("M", avoid)
        pl["ghost"] = base
    n = len(metric.items) if isinstance(metric, S.Tuple) else 1
    ghosts = [base] if n == 1 else [f"{base}_{i}" for i in range(n)]
    for gname in ghosts:
        _fresh_check(gname, avoid, "ghost")
    pos, eq, desc, stop = convergence_formulas(metric, zero, delta, ghosts)
    body_goal = S.Diamond(g.body, S.c_and(inv, S.c_or(desc, stop)))
    pl["ghosts"] = ghosts
    return [Sequent(sq.ctx, inv),
            Sequent((inv, S.c_and(pos, eq)), body_goal),
            Sequent((inv, stop), p)]


# --------------------------------------------------------------- ODE rules

def _ode_goal(sq, kind):
    m, g, p = _modality(sq.goal)
    _need(isinstance(g, S.ODE), "goal is not an ODE modality")
    _need(m is kind, f"rule needs a {'box' if kind is S.Box else 'diamond'} modality")
    return g, p


def differential_formula(f):
    """(φ)' for comparisons and their conjunctions/disjunctions."""
    if isinstance(f, S.Cmp):
        a, b = S.Differential(f.left), S.Differential(f.right)
        if f.rel in (">=", ">"):
            return S.Cmp(a, ">=", b)
        if f.rel in ("<=", "<"):
            return S.Cmp(a, "<=", b)
        if f.rel == "=":
            return S.Cmp(a, "=", b)
        raise RuleError("(φ)' is undefined for ≠")
    for match in (S.match_and, S.match_or):
        m = match(f)
        if m is not None:
            return S.c_and(differential_formula(m[0]), differential_formula(m[1]))
    raise RuleError(f"(φ)' is undefined for {S.pretty(S.resugar(f))}")


def _check_differentiable(f):
    for n in S.walk(f):
        if isinstance(n, S.Differential):
            try:
                expand_differentials(n)
            except NonDifferentiable as err:
                raise RuleError(f"NonDifferentiable: {err}") from None


def r_di(sq, pl):
    g, phi = _ode_goal(sq, S.Box)
    dphi = differential_formula(phi)
    _check_differentiable(dphi)
    assigns = None
    for x, f in g.eqs:
        a = S.Assign(S.prime(x), f)
        assigns = a if assigns is None else S.Seq(assigns, a)
    inner = S.c_implies(g.domain, S.Box(assigns, dphi))
    for x in reversed(g.vars):
        inner = S.c_forall(x, inner)
    return [Sequent(sq.ctx, phi), Sequent(sq.ctx, inner)]


def r_dc(sq, pl):
    g, phi = _ode_goal(sq, S.Box)
    r = _formula(pl, "cut")
    return [Sequent(sq.ctx, S.Box(g, r)),
            Sequent(sq.ctx, S.Box(S.ODE(g.eqs, S.c_and(g.domain, r)), phi))]


def r_dw(sq, pl):
    g, phi = _ode_goal(sq, S.Box)
    inner = S.c_implies(g.domain, phi)
    for x in reversed(g.vars):
        inner = S.c_forall(S.prime(x), inner)
    for x in reversed(g.vars):
        inner = S.c_forall(x, inner)
    return [Sequent(sq.ctx, inner)]


def r_dg(sq, pl):
    g, phi = _ode_goal(sq, S.Box)
    a, b = _term(pl, "a"), _term(pl, "b")
    avoid = sq.names() | all_vars(a) | all_vars(b)
    y = _pick_fresh(pl, "ghost", "y", avoid)
    for t in (a, b):
        _need(not any(S.is_primed(v) for v in free_vars(t)),
              "ghost coefficients mention primed variables")
    rhs = S.Plus(S.Times(a, S.Var(y)), b)
    ode = S.ODE(g.eqs + ((y, rhs),), g.domain)
    return [Sequent(sq.ctx, S.c_exists(y, S.Box(ode, phi)))]


def r_dv(sq, pl):
    g, phi = _ode_goal(sq, S.Diamond)
    d, eps, h, gg = (_term(pl, k) for k in ("d", "eps", "h", "g"))
    avoid = sq.names() | _payload_names(pl)
    t = _pick_fresh(pl, "time", "t", avoid)
    forbidden = set(g.vars) | {S.prime(x) for x in g.vars} | {t, S.prime(t)}
    for name, term in (("d", d), ("ε", eps)):
        bad = free_vars(term) & forbidden
        _need(not bad, f"{sorted(bad)[0]} is free in {name}")
    clock = S.ODE(((t, S.lit(1)),) + g.eqs, g.domain)
    p1 = S.Diamond(S.Seq(S.Assign(t, S.lit(0)), clock), S.Cmp(S.Var(t), ">=", d))
    rate = S.Plus(S.Differential(h), S.Neg(S.Differential(gg)))
    p2 = S.Box(S.ODE(g.eqs, S.TT), S.Cmp(rate, ">=", eps))
    _check_differentiable(p2)
    p3 = Sequent((g.domain, S.Cmp(h, ">=", gg)), phi)
    p4 = S.c_all([S.Cmp(d, ">", S.lit(0)), S.Cmp(eps, ">", S.lit(0)),
                  S.Cmp(S.Plus(h, S.Neg(gg)), ">=", S.Neg(S.Times(d, eps)))])
    return [Sequent(sq.ctx, p1), Sequent(sq.ctx, p2), p3, Sequent(sq.ctx, p4)]


def solution_maps(g: S.ODE, s_name: str, r_name: str):
    """Closed form of a nilpotent ODE as substitutions at times s and r."""
    try:
        sol = solve_nilpotent(ODESystem.of(g))
    except NotNilpotent as err:
        raise RuleError(f"no closed-form solution: {err}") from None
    at_s = sol.terms(S.Var(s_name))
    at_r = sol.terms(S.Var(r_name))
    primes = {}
    for x, f in g.eqs:
        primes[S.prime(x)] = _subst(f, at_s)
    return sol, at_s, at_r, primes


def _solve_rule(kind):
    def rule(sq, pl):
        g, phi = _ode_goal(sq, kind)
        avoid = sq.names() | _payload_names(pl)
        s_name = _pick_fresh(pl, "time", "s", avoid)
        r_name = _pick_fresh(pl, "sample", "r", avoid | {s_name})
        _need(s_name != r_name, "time and sample variables must differ")
        _need(not any(S.is_primed(v) for v in free_vars(g.domain)),
              "domain mentions primed variables")
        sol, at_s, at_r, primes = solution_maps(g, s_name, r_name)
        ann = pl.get("solution")
        if ann is not None:
            _need(isinstance(ann, dict) and set(ann) == set(g.vars),
                  "solution annotation must give one term per ODE variable")
            for x, t in ann.items():
                from .ode import poly_from_term, p_add, p_scale, NotPolynomial
                try:
                    same = not p_add(poly_from_term(t),
                                     p_scale(poly_from_term(at_s[x]), -1))
                except NotPolynomial:
                    same = False
                _need(same, f"annotated solution of {x} is not the closed form")
        pl["closed_form"] = sol
        S_, R_ = S.Var(s_name), S.Var(r_name)
        psi_r = _subst_prime_free(g.domain, at_r)
        phi_s = _subst(phi, {**at_s, **primes})
        during = S.c_forall(r_name, S.c_implies(
            S.Cmp(S.lit(0), "<=", R_), S.c_implies(S.Cmp(R_, "<=", S_), psi_r)))
        nonneg = S.Cmp(S_, ">=", S.lit(0))
        if kind is S.Box:
            prem = S.c_forall(s_name, S.c_implies(nonneg, S.c_implies(during, phi_s)))
        else:
            prem = S.c_exists(s_name, S.c_and(nonneg, S.c_and(during, phi_s)))
        return [Sequent(sq.ctx, prem)]
    return rule


def _subst_prime_free(f, sigma):
    return _subst(f, sigma)


def r_gv(sq, pl):
    m, g, p = _modality(sq.goal)
    _need(m is S.Diamond, "GV concludes ⟨α⟩p")
    q = _formula(pl, "q", S.TT)
    clash = free_vars(p) & bound_vars(g)
    _need(not clash, f"{sorted(clash)[0]} is free in p and bound by the game")
    return [Sequent(sq.ctx, p), Sequent(sq.ctx, S.Diamond(g, q))]


def r_arith(sq, pl):
    return []


@dataclass(frozen=True)
class RuleSpec:
    name: str
    fn: object
    payload: tuple           # accepted payload keys
    group: str


_RULES = [
    RuleSpec("[u]I", r_box_choice_I, (), "propositional"),
    RuleSpec("[u]E1", _box_choice_E(1), ("other",), "propositional"),
    RuleSpec("[u]E2", _box_choice_E(2), ("other",), "propositional"),
    RuleSpec("<u>I1", _dia_choice_I(1), (), "propositional"),
    RuleSpec("<u>I2", _dia_choice_I(2), (), "propositional"),
    RuleSpec("<u>E", r_dia_choice_E, ("on",), "propositional"),
    RuleSpec("<?>I", r_dia_test_I, (), "propositional"),
    RuleSpec("<?>E1", r_dia_test_E1, ("with",), "propositional"),
    RuleSpec("<?>E2", r_dia_test_E2, ("with",), "propositional"),
    RuleSpec("[?]I", r_box_test_I, (), "propositional"),
    RuleSpec("[?]E", r_box_test_E, ("with",), "propositional"),
    RuleSpec("hyp", r_hyp, ("index",), "propositional"),
    RuleSpec("[:*]I", r_box_any_I, ("fresh",), "first-order"),
    RuleSpec("<:*>I", r_dia_any_I, ("witness",), "first-order"),
    RuleSpec("[:*]E", r_box_any_E, ("on", "term"), "first-order"),
    RuleSpec("<:*>E", r_dia_any_E, ("on",), "first-order"),
    RuleSpec(";I", r_seq_I, (), "first-order"),
    RuleSpec(":=I", r_assign_I, ("fresh",), "first-order"),
    RuleSpec("M", r_mono, ("mid",), "first-order"),
    RuleSpec("^dI", r_dual_I, (), "first-order"),
    RuleSpec("<*>E", r_dia_rep_E, ("on",), "loops"),
    RuleSpec("[*]E", r_box_rep_E, (), "loops"),
    RuleSpec("<*>S", r_dia_rep_S, (), "loops"),
    RuleSpec("[*]R", r_box_rep_R, (), "loops"),
    RuleSpec("<*>G", r_dia_rep_G, (), "loops"),
    RuleSpec("loop", r_loop, ("inv",), "loops"),
    RuleSpec("FP", r_fp, ("on",), "loops"),
    RuleSpec("<*>I", r_dia_rep_I, ("inv", "metric", "zero", "delta", "ghost"), "loops"),
    RuleSpec("DI", r_di, (), "ode"),
    RuleSpec("DC", r_dc, ("cut",), "ode"),
    RuleSpec("DW", r_dw, (), "ode"),
    RuleSpec("DG", r_dg, ("ghost", "a", "b"), "ode"),
    RuleSpec("DV", r_dv, ("time", "d", "eps", "h", "g"), "ode"),
    RuleSpec("bsolve", _solve_rule(S.Box), ("time", "sample", "solution"), "ode"),
    RuleSpec("dsolve", _solve_rule(S.Diamond), ("time", "sample", "solution"), "ode"),
    RuleSpec("GV", r_gv, ("q",), "derived"),
    RuleSpec("arith", r_arith, ("lemma",), "leaf"),
]
RULES = {r.name: r for r in _RULES}


def apply_rule(sq: Sequent, rule: str, payload: dict | None = None) -> list:
    """Premises of ``rule`` for goal sequent ``sq``; raises RuleError."""
    rule = canonical_rule(rule)
    spec = RULES.get(rule)
    if spec is None:
        raise RuleError(f"unknown rule {rule!r}")
    payload = payload if payload is not None else {}
    extra = set(payload) - set(spec.payload) - {"renaming", "ghosts", "closed_form"}
    if extra:
        raise RuleError(f"unexpected payload :{sorted(extra)[0]} for {rule}")
    return spec.fn(sq, payload)


# ------------------------------------------------------------ arithmetic

class Verdict(enum.Enum):
    PROVED = "Proved"
    ASSUMED = "Assumed"
    REFUTED = "Refuted"


class NotFirstOrder(Exception):
    pass


def is_first_order(f) -> bool:
    try:
        _fo_check(f)
        return True
    except NotFirstOrder:
        return False


def _fo_check(f):
    if isinstance(f, S.Cmp):
        return
    m = S.match_and(f) or S.match_or(f)
    if m:
        _fo_check(m[0]), _fo_check(m[1])
        return
    if isinstance(f, S.Box) and isinstance(f.game, S.Test):
        _fo_check(f.game.cond), _fo_check(f.post)
        return
    if isinstance(f, (S.Box, S.Diamond)) and isinstance(f.game, S.AssignAny):
        _fo_check(f.post)
        return
    raise NotFirstOrder(S.pretty(S.resugar(f)))


ARITH_PRECISION = 64
_T, _F, _U = True, False, None


def _cmp3(f: S.Cmp, s: State):
    try:
        d = eval_term(S.Plus(f.left, S.Neg(f.right)), s, ARITH_PRECISION)
    except EvalError:
        return _U
    r = f.rel
    if r == ">":
        return _T if d.lo > 0 else _F if d.hi <= 0 else _U
    if r == ">=":
        return _T if d.lo >= 0 else _F if d.hi < 0 else _U
    if r == "<":
        return _T if d.hi < 0 else _F if d.lo >= 0 else _U
    if r == "<=":
        return _T if d.hi <= 0 else _F if d.lo > 0 else _U
    if r == "=":
        return _T if d.lo == d.hi == 0 else _F if not d.contains(0) else _U
    return _T if not d.contains(0) else _F if d.lo == d.hi == 0 else _U


def eval3(f, s: State, free_ok: bool = False):
    """Kleene three-valued truth of a first-order formula at state s.
    Free variables read from s; quantifiers are unknown unless decided by
    their body regardless of the bound value."""
    if isinstance(f, S.Cmp):
        if not free_ok and free_vars(f) - set(s.names()):
            return _U
        return _cmp3(f, s)
    m = S.match_and(f)
    if m:
        a, b = eval3(m[0], s, free_ok), eval3(m[1], s, free_ok)
        if a is _F or b is _F:
            return _F
        return _T if a is _T and b is _T else _U
    m = S.match_or(f)
    if m:
        a, b = eval3(m[0], s, free_ok), eval3(m[1], s, free_ok)
        if a is _T or b is _T:
            return _T
        return _F if a is _F and b is _F else _U
    if isinstance(f, S.Box) and isinstance(f.game, S.Test):
        a, b = eval3(f.game.cond, s, free_ok), eval3(f.post, s, free_ok)
        if a is _F or b is _T:
            return _T
        return _F if a is _T and b is _F else _U
    if isinstance(f, (S.Box, S.Diamond)) and isinstance(f.game, S.AssignAny):
        x = f.game.var
        if x not in free_vars(f.post):
            return eval3(f.post, s, free_ok)
        return _U
    return _U


def _ground(t) -> bool:
    return not free_vars(t)


def _ground_equalities(facts: list) -> dict:
    sigma = {}
    changed = True
    while changed:
        changed = False
        for f in facts:
            if not (isinstance(f, S.Cmp) and f.rel == "="):
                continue
            cur = S.Cmp(_safe_subst(f.left, sigma), "=", _safe_subst(f.right, sigma))
            for lhs, rhs in ((cur.left, cur.right), (cur.right, cur.left)):
                if (isinstance(lhs, S.Var) and lhs.name not in sigma
                        and _ground(rhs)):
                    sigma[lhs.name] = rhs
                    changed = True
                    break
    return sigma


def _safe_subst(f, sigma):
    if not sigma:
        return f
    try:
        return substitute_many(f, sigma)
    except AdmissibilityError:
        return f


_SAMPLES = [Fraction(v) for v in (0, 1, -1, 2, -2, Fraction(1, 2), Fraction(-1, 2), 3, 10, -10)]


def discharge_arith(sq: Sequent, max_points: int = 400) -> Verdict:
    """Three-valued oracle for first-order sequents.

    Ground equalities in the context are substituted first.  A goal that
    evaluates true by interval arithmetic is Proved; a contradictory
    ground context also proves it.  A sample point satisfying the context
    and violating the goal makes it Refuted.  Otherwise Assumed.
    """
    for f in sq.ctx + (sq.goal,):
        _fo_check(f)
    facts = []
    for f in sq.ctx:
        facts.extend(S.conjuncts(expand_differentials_f(f)))
    goal = expand_differentials_f(sq.goal)
    sigma = _ground_equalities(facts)
    facts = [_safe_subst(f, sigma) for f in facts]
    goal = _safe_subst(goal, sigma)
    empty = State()
    for f in facts:
        if _closed(f) and eval3(f, empty) is _F:
            return Verdict.PROVED
    if _closed(goal):
        v = eval3(goal, empty)
        if v is _T:
            return Verdict.PROVED
        if v is _F and all(_closed(f) and eval3(f, empty) is _T for f in facts):
            return Verdict.REFUTED
        return Verdict.ASSUMED
    # search for a counterexample over the free variables
    body = goal
    while isinstance(body, S.Box) and isinstance(body.game, S.AssignAny):
        body = body.post
    names = sorted(free_vars(body) | set().union(*(free_vars(f) for f in facts)))
    if len(names) <= 4:
        for pt in itertools.islice(itertools.product(_SAMPLES, repeat=len(names)),
                                   max_points):
            st = State(dict(zip(names, pt)))
            if all(eval3(f, st) is _T for f in facts) and eval3(body, st) is _F:
                return Verdict.REFUTED
    return Verdict.ASSUMED


def _closed(f) -> bool:
    return not free_vars(f)


def expand_differentials_f(f):
    """Replace (t)' by its total differential throughout a formula."""
    match f:
        case S.Cmp(a, r, b):
            try:
                return S.Cmp(expand_differentials(a), r, expand_differentials(b))
            except NonDifferentiable as err:
                raise NotFirstOrder(str(err)) from None
        case S.Diamond(g, p):
            return S.Diamond(_expand_game(g), expand_differentials_f(p))
        case S.Box(g, p):
            return S.Box(_expand_game(g), expand_differentials_f(p))
    return f


def _expand_game(g):
    match g:
        case S.Test(c):
            return S.Test(expand_differentials_f(c))
        case S.Choice(a, b):
            return S.Choice(_expand_game(a), _expand_game(b))
    return g


# ----------------------------------------------------------------- check

class Policy(enum.Enum):
    INTERVAL_THEN_ASSUME = "interval-then-assume"
    STRICT = "strict"


@dataclass
class Obligation:
    path: str
    lemma: str | None
    sequent: Sequent
    verdict: Verdict

    def to_json(self) -> dict:
        return {"path": self.path, "lemma": self.lemma,
                "sequent": self.sequent.render(), "verdict": self.verdict.value}


@dataclass
class Failed:
    rule: str
    reason: str
    path: str

    def __str__(self):
        return f"Failed({DISPLAY.get(self.rule, self.rule)}, {self.reason}, at {self.path or '<root>'})"


@dataclass
class CheckedNode:
    """A proof node together with the sequent it proves."""
    rule: str
    payload: dict
    sequent: Sequent
    children: list
    path: str
    verdict: Verdict | None = None


@dataclass
class CheckResult:
    verdict: object                 # "Checked" or Failed
    obligations: list
    tree: CheckedNode | None = None
    leaves: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.verdict == "Checked"

    @property
    def assumed(self) -> list:
        return [o for o in self.obligations if o.verdict is Verdict.ASSUMED]

    def to_json(self) -> dict:
        v = "Checked" if self.ok else {
            "Failed": {"rule": self.verdict.rule, "reason": self.verdict.reason,
                       "path": self.verdict.path}}
        return {"verdict": v, "obligations": [o.to_json() for o in self.obligations]}


class _Fail(Exception):
    def __init__(self, failed: Failed):
        self.failed = failed


def check(ctx, proof: ProofTerm, goal, policy: Policy = Policy.INTERVAL_THEN_ASSUME) -> CheckResult:
    """Check ``proof`` against the sequent ctx |- goal."""
    obligations: list = []
    try:
        tree = _check(Sequent(tuple(ctx), goal), proof, "", obligations, policy)
    except _Fail as f:
        return CheckResult(f.failed, obligations)
    return CheckResult("Checked", obligations, tree)


def _check(sq: Sequent, pt: ProofTerm, path: str, obligations, policy) -> CheckedNode:
    rule = canonical_rule(pt.rule)
    here = f"{path}/{rule}" if path else rule
    payload = dict(pt.payload)
    try:
        premises = apply_rule(sq, rule, payload)
    except RuleError as err:
        raise _Fail(Failed(rule, str(err), here)) from None
    except NonDifferentiable as err:
        raise _Fail(Failed(rule, f"NonDifferentiable: {err}", here)) from None
    node = CheckedNode(rule, payload, sq, [], here)
    if rule == "arith":
        try:
            verdict = discharge_arith(sq)
        except NotFirstOrder as err:
            raise _Fail(Failed(rule, f"leaf is not first-order: {err}", here)) from None
        node.verdict = verdict
        obligations.append(Obligation(here, payload.get("lemma"), sq, verdict))
        if verdict is Verdict.REFUTED:
            raise _Fail(Failed(rule, f"arithmetic refuted: {sq.render()}", here))
        if verdict is Verdict.ASSUMED and policy is Policy.STRICT:
            raise _Fail(Failed(rule, f"assumed leaf in strict mode: {sq.render()}", here))
    if len(premises) != len(pt.children):
        raise _Fail(Failed(rule, f"expected {len(premises)} subproofs, got "
                                 f"{len(pt.children)}", here))
    for i, (prem, child) in enumerate(zip(premises, pt.children)):
        node.children.append(_check(prem, child, f"{here}#{i}", obligations, policy))
    return node


# ------------------------------------------------------- .cdglp files

FORMULA_KEYS = {"on", "with", "mid", "inv", "cut", "q"}
TERM_KEYS = {"term", "witness", "metric", "zero", "delta", "a", "b",
             "d", "eps", "h", "g"}
NAME_KEYS = {"fresh", "ghost", "time", "sample", "lemma"}
GAME_KEYS = {"other"}


@dataclass
class NamedProof:
    name: str
    goal: object
    ctx: tuple
    proof: ProofTerm
    line: int = 0


def _sexp_tokens(text: str):
    i, line, col, n = 0, 1, 1, len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            i, line, col = i + 1, line + 1, 1
        elif c.isspace():
            i, col = i + 1, col + 1
        elif text.startswith("//", i):
            while i < n and text[i] != "\n":
                i += 1
        elif c in "()":
            yield c, c, line, col
            i, col = i + 1, col + 1
        elif c == '"':
            j = text.find('"', i + 1)
            if j < 0:
                raise S.ParseError("unterminated string", line, col)
            chunk = text[i + 1:j]
            yield "str", chunk, line, col
            nl = chunk.count("\n")
            line += nl
            col = (len(chunk) - chunk.rfind("\n")) if nl else col + len(chunk) + 2
            i = j + 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in '()"':
                j += 1
            yield "atom", text[i:j], line, col
            col += j - i
            i = j


def _read_sexps(text: str) -> list:
    stack, top = [], []
    for kind, val, line, col in _sexp_tokens(text):
        if kind == "(":
            stack.append((top, line, col))
            top = []
        elif kind == ")":
            if not stack:
                raise S.ParseError("unbalanced ')'", line, col)
            done = ("list", top, line, col)
            top, pline, pcol = stack.pop()
            top.append(("list", done[1], pline, pcol))
        else:
            top.append((kind, val, line, col))
    if stack:
        _, line, col = stack[-1]
        raise S.ParseError("unclosed '('", line, col)
    return top


def _payload_value(key, raw, env, line, col):
    try:
        if key in FORMULA_KEYS:
            return S.desugar(S.parse(raw, "formula", env))
        if key in TERM_KEYS:
            return S.parse(raw, "term", env)
        if key in GAME_KEYS:
            return S.desugar(S.parse(raw, "game", env))
    except S.ParseError as err:
        raise S.ParseError(f"in :{key} payload: {err.msg}", line, col + err.col) from None
    if key == "index":
        if not raw.isdigit():
            raise S.ParseError(":index must be a natural number", line, col)
        return int(raw)
    if key == "solution":
        sol = {}
        for part in raw.split(","):
            name, _, rhs = part.partition("=")
            sol[name.strip()] = S.parse(rhs, "term", env)
        return sol
    return raw


def _proof_node(node, env) -> ProofTerm:
    kind, items, line, col = node
    if kind != "list" or not items or items[0][0] != "atom":
        raise S.ParseError("expected (rule ...)", line, col)
    pt = ProofTerm(canonical_rule(items[0][1]), {}, [], line)
    rest = items[1:]
    i = 0
    while i < len(rest):
        k, val, l, c = rest[i]
        if k == "atom" and val.startswith(":"):
            if i + 1 >= len(rest) or rest[i + 1][0] not in ("str", "atom"):
                raise S.ParseError(f"payload {val} needs a value", l, c)
            key = val[1:]
            _, raw, vl, vc = rest[i + 1]
            pt.payload[key] = _payload_value(key, raw, env, vl, vc)
            i += 2
        elif k == "list":
            pt.children.append(_proof_node(rest[i], env))
            i += 1
        else:
            raise S.ParseError(f"unexpected {val!r}", l, c)
    return pt


def parse_proofs(text: str, env: dict | None = None) -> list:
    """Read ``(proof name :goal "..." [:ctx "..."] tree)`` entries.

    String payloads are parsed against ``env`` (a module environment), so
    they may use the module's named constants, terms, games and formulas.
    """
    env = dict(env or {})
    out = []
    for node in _read_sexps(text):
        kind, items, line, col = node
        if kind != "list" or not items or items[0][1] != "proof":
            raise S.ParseError("expected (proof name ...)", line, col)
        if len(items) < 2 or items[1][0] != "atom":
            raise S.ParseError("proof needs a name", line, col)
        name = items[1][1]
        goal, ctx, tree = None, [], None
        rest = items[2:]
        i = 0
        while i < len(rest):
            k, val, l, c = rest[i]
            if k == "atom" and val in (":goal", ":ctx"):
                if i + 1 >= len(rest) or rest[i + 1][0] not in ("str", "atom"):
                    raise S.ParseError(f"{val} needs a value", l, c)
                raw = rest[i + 1][1]
                try:
                    f = S.parse(raw, "formula", env)
                except S.ParseError as err:
                    raise S.ParseError(f"in {val}: {err.msg}", rest[i + 1][2],
                                       rest[i + 1][3] + err.col) from None
                if val == ":goal":
                    goal = f
                else:
                    ctx.append(f)
                i += 2
            elif k == "list" and tree is None:
                tree = _proof_node(rest[i], env)
                i += 1
            else:
                raise S.ParseError(f"unexpected {val!r} in proof {name}", l, c)
        if goal is None or tree is None:
            raise S.ParseError(f"proof {name} needs :goal and a proof tree", line, col)
        out.append(NamedProof(name, goal, tuple(ctx), tree, line))
    return out


def format_proof(pt: ProofTerm, indent: int = 0) -> str:
    pad = "  " * indent
    parts = [pt.rule]
    for k, v in pt.payload.items():
        if isinstance(v, (S.TERM_TYPES + S.FORMULA_TYPES + S.GAME_TYPES)):
            v = S.pretty(S.resugar(v) if isinstance(v, S.FORMULA_TYPES) else v)
        elif isinstance(v, dict):
            v = ", ".join(f"{x}={S.pretty(t)}" for x, t in v.items())
        parts.append(f':{k} "{v}"')
    head = pad + "(" + " ".join(parts)
    if not pt.children:
        return head + ")"
    kids = "\n".join(format_proof(c, indent + 1) for c in pt.children)
    return head + "\n" + kids + ")"
