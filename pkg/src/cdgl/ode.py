"""ODE solutions: exact nilpotent solving, validated Picard iteration,
the sampled ``solves`` check and symbolic total differentials."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import factorial

from . import syntax as S
from .creal import (CReal, DEFAULT_PRECISION, Exact, FromFunction, Interval,
                    State, as_creal, eval_term, term_creal)
from .statics import free_vars


class ODEError(Exception):
    pass


class NotNilpotent(ODEError):
    pass


class NotPolynomial(ODEError):
    pass


class LipschitzBoundFailure(ODEError):
    pass


class NonDifferentiable(ODEError):
    pass


# ------------------------------------------------------------ polynomials
#
# A polynomial is a dict from monomials to nonzero Fractions; a monomial is
# a sorted tuple of (variable, exponent) pairs.

ONE: tuple = ()


def _mono_mul(a: tuple, b: tuple) -> tuple:
    d = dict(a)
    for v, e in b:
        d[v] = d.get(v, 0) + e
    return tuple(sorted(d.items()))


def p_const(q) -> dict:
    q = Fraction(q)
    return {ONE: q} if q else {}


def p_var(x: str) -> dict:
    return {((x, 1),): Fraction(1)}


def p_add(a: dict, b: dict) -> dict:
    out = dict(a)
    for m, c in b.items():
        c2 = out.get(m, 0) + c
        if c2:
            out[m] = c2
        else:
            out.pop(m, None)
    return out


def p_scale(a: dict, q) -> dict:
    q = Fraction(q)
    return {m: c * q for m, c in a.items()} if q else {}


def p_mul(a: dict, b: dict) -> dict:
    out: dict = {}
    for ma, ca in a.items():
        for mb, cb in b.items():
            m = _mono_mul(ma, mb)
            c = out.get(m, 0) + ca * cb
            if c:
                out[m] = c
            else:
                out.pop(m, None)
    return out


def p_pow(a: dict, n: int) -> dict:
    out = p_const(1)
    for _ in range(n):
        out = p_mul(out, a)
    return out


def p_deriv(a: dict, x: str) -> dict:
    out: dict = {}
    for m, c in a.items():
        d = dict(m)
        e = d.get(x, 0)
        if not e:
            continue
        if e == 1:
            del d[x]
        else:
            d[x] = e - 1
        mm = tuple(sorted(d.items()))
        out[mm] = out.get(mm, 0) + c * e
    return {m: c for m, c in out.items() if c}


def p_vars(a: dict) -> set:
    return {v for m in a for v, _ in m}


def p_degree(a: dict, within=None) -> int:
    return max((sum(e for v, e in m if within is None or v in within)
                for m in a), default=0)


def p_subst(a: dict, sigma: dict) -> dict:
    """Compose: replace variables by polynomials."""
    out: dict = {}
    for m, c in a.items():
        term = p_const(c)
        for v, e in m:
            term = p_mul(term, p_pow(sigma[v], e) if v in sigma
                         else {((v, e),): Fraction(1)})
        out = p_add(out, term)
    return out


def p_lie(a: dict, field_: dict) -> dict:
    out: dict = {}
    for x, f in field_.items():
        out = p_add(out, p_mul(p_deriv(a, x), f))
    return out


def poly_from_term(t) -> dict:
    match t:
        case S.RealLit(q):
            return p_const(q)
        case S.Var(x):
            return p_var(x)
        case S.Plus(a, b):
            return p_add(poly_from_term(a), poly_from_term(b))
        case S.Neg(a):
            return p_scale(poly_from_term(a), -1)
        case S.Times(a, b):
            return p_mul(poly_from_term(a), poly_from_term(b))
        case S.Div(a, b):
            pb = poly_from_term(b)
            if p_vars(pb) or not pb:
                raise NotPolynomial(f"division by non-constant {S.pretty(b)}")
            return p_scale(poly_from_term(a), 1 / pb[ONE])
    raise NotPolynomial(f"not a polynomial term: {S.pretty(t)}")


def poly_to_term(a: dict):
    if not a:
        return S.lit(0)
    parts = []
    for m in sorted(a, key=lambda m: (sum(e for _, e in m), m)):
        c = a[m]
        factors = []
        for v, e in m:
            factors.extend([S.Var(v)] * e)
        mono = None
        for f in factors:
            mono = f if mono is None else S.Times(mono, f)
        if mono is None:
            parts.append(S.RealLit(c))
        elif c == 1:
            parts.append(mono)
        elif c == -1:
            parts.append(S.Neg(mono))
        else:
            parts.append(S.Times(S.RealLit(c), mono))
    out = parts[0]
    for p in parts[1:]:
        out = S.Plus(out, p)
    return out


def p_eval_interval(a: dict, env: dict) -> Interval:
    """Range enclosure of a polynomial over a box of intervals."""
    total = Interval.point(0)
    for m, c in a.items():
        iv = Interval.point(c)
        for v, e in m:
            iv = iv * _ipow(env[v], e)
        total = total + iv
    return total


def _ipow(iv: Interval, e: int) -> Interval:
    if e == 1:
        return iv
    lo, hi = iv.lo ** e, iv.hi ** e
    if e % 2 == 0:
        if iv.lo <= 0 <= iv.hi:
            return Interval(0, max(lo, hi))
        return Interval(min(lo, hi), max(lo, hi))
    return Interval(lo, hi)


# ----------------------------------------------------------------- systems

@dataclass(frozen=True)
class ODESystem:
    equations: tuple     # ((var, rhs Term), ...)
    domain: object = S.TT

    def __post_init__(self):
        object.__setattr__(self, "equations", tuple(self.equations))
        names = [v for v, _ in self.equations]
        if len(set(names)) != len(names):
            raise ValueError("duplicate ODE variables")
        for v, t in self.equations:
            if any(S.is_primed(x) for x in free_vars(t)):
                raise ValueError(f"right-hand side of {v}' mentions a primed variable")

    @staticmethod
    def of(g: S.ODE) -> "ODESystem":
        return ODESystem(g.eqs, g.domain)

    @property
    def vars(self) -> tuple:
        return tuple(v for v, _ in self.equations)

    def rhs(self, x: str):
        return dict(self.equations)[x]

    def polys(self) -> dict:
        return {v: poly_from_term(t) for v, t in self.equations}


# ---------------------------------------------------------- nilpotent solve

@dataclass
class SymbolicSolution:
    """x(s) = sum_j coeffs[x][j] * s**j, coefficients polynomial in the
    initial values of the state variables."""
    system: ODESystem
    coeffs: dict          # var -> list of polynomials

    def degree(self) -> int:
        return max(len(c) - 1 for c in self.coeffs.values())

    def poly(self, x: str, time: str) -> dict:
        out: dict = {}
        for j, c in enumerate(self.coeffs[x]):
            out = p_add(out, p_mul(c, p_pow(p_var(time), j)))
        return out

    def term(self, x: str, time) -> object:
        """Solution of x at symbolic time ``time`` (a Term) as a Term."""
        out = None
        for j, c in enumerate(self.coeffs[x]):
            if not c:
                continue
            piece = poly_to_term(c)
            for _ in range(j):
                piece = time if piece == S.lit(1) else S.Times(piece, time)
            out = piece if out is None else S.Plus(out, piece)
        return out if out is not None else S.lit(0)

    def terms(self, time) -> dict:
        return {x: self.term(x, time) for x in self.system.vars}

    def verify(self) -> bool:
        """Exact check that d/ds x(s) = f(x(s)) and x(0) = x."""
        tv = "__s"
        sol = {x: self.poly(x, tv) for x in self.system.vars}
        polys = self.system.polys()
        for x in self.system.vars:
            if self.coeffs[x][0] != p_var(x):
                return False
            lhs = p_deriv(sol[x], tv)
            rhs = p_subst(polys[x], sol)
            if p_add(lhs, p_scale(rhs, -1)):
                return False
        return True

    def value(self, x: str, s: State, time) -> CReal:
        """CReal value of x after evolving for ``time`` from state s."""
        time = as_creal(time)
        acc: CReal | None = None
        for c in reversed(self.coeffs[x]):
            cv = term_creal(poly_to_term(c), s)
            acc = cv if acc is None else cv + time * acc
        return acc

    def state_at(self, s: State, time) -> State:
        return s.update({x: self.value(x, s, time) for x in self.system.vars})


def nilpotency_bound(n: int, d: int) -> int:
    return n * sum(max(d, 1) ** i for i in range(n + 1)) + 1


def solve_nilpotent(sys: ODESystem, max_terms: int = 20000) -> SymbolicSolution:
    """Closed-form polynomial solution by iterated Lie derivatives.

    Variables that have no equation act as constant parameters.  Raises
    NotNilpotent when some iterated derivative fails to vanish in time.
    """
    try:
        field_ = sys.polys()
    except NotPolynomial as err:
        raise NotNilpotent(str(err)) from None
    n = len(field_)
    d = max((p_degree(f, set(field_)) for f in field_.values()), default=1)
    bound = nilpotency_bound(n, d)
    coeffs = {}
    for x in sys.vars:
        cur = p_var(x)
        seq = []
        j = 0
        while cur:
            if j > bound or len(cur) > max_terms:
                raise NotNilpotent(f"derivatives of {x} do not vanish")
            seq.append(p_scale(cur, Fraction(1, factorial(j))))
            cur = p_lie(cur, field_)
            j += 1
        coeffs[x] = seq or [p_const(0)]
    sol = SymbolicSolution(sys, coeffs)
    if not sol.verify():
        raise NotNilpotent("closed form failed verification")
    return sol


@dataclass
class TermSolution:
    """A proposed solution given as terms in a time variable."""
    time_var: str
    terms: dict           # var -> Term

    def state_at(self, s: State, time) -> State:
        st = s.set(self.time_var, as_creal(time))
        return s.update({x: term_creal(t, st) for x, t in self.terms.items()})


# -------------------------------------------------------------- Picard

@dataclass
class _Step:
    t0: Fraction
    h: Fraction
    polys: dict           # var -> list of dyadic Fraction coefficients in tau
    err: Fraction         # sup-norm error bound over the step


@dataclass
class SampledSolution:
    system: ODESystem
    duration: Fraction
    k: int
    steps: list
    params: dict = field(default_factory=dict)
    lipschitz: Fraction = Fraction(0)
    _initial: State | None = None

    @property
    def error_bound(self) -> Fraction:
        return max((st.err for st in self.steps), default=Fraction(0))

    def _step_for(self, t: Fraction) -> _Step:
        for st in self.steps:
            if t <= st.t0 + st.h:
                return st
        return self.steps[-1]

    def sample(self, t) -> dict:
        t = Fraction(t)
        if not 0 <= t <= self.duration:
            raise ValueError(f"time {t} outside [0, {self.duration}]")
        if not self.steps:
            return {x: self._initial.get(x).refine(self.k) for x in self.system.vars}
        st = self._step_for(t)
        tau = t - st.t0
        out = {}
        for x, cs in st.polys.items():
            v = Fraction(0)
            for c in reversed(cs):
                v = v * tau + c
            out[x] = Interval(v - st.err, v + st.err)
        return out

    def rows(self, n: int = 128) -> list:
        """JSON rows of (time, per-variable interval) on a uniform grid."""
        out = []
        for i in range(n + 1):
            t = self.duration * i / n
            out.append({"time": str(t),
                        **{x: iv.to_json() for x, iv in self.sample(t).items()}})
        return out

    def creal(self, x: str, t) -> CReal:
        """CReal view: finer requests re-run the integration."""
        t = Fraction(t)

        def fn(k):
            if k <= self.k:
                return self.sample(t)[x]
            finer = picard_solve(self.system, self._initial, self.duration, k)
            return finer.sample(t)[x]
        return FromFunction(fn)

    def state_at(self, s: State, t) -> State:
        return s.update({x: self.creal(x, t) for x in self.system.vars})


def _fix(q: Fraction, bits: int) -> Fraction:
    scale = 1 << bits
    return Fraction(round(q * scale), scale)


def _upoly_mul(a: list, b: list, deg: int | None = None) -> list:
    n = len(a) + len(b) - 1
    if deg is not None:
        n = min(n, deg + 1)
    out = [0] * n
    for i, x in enumerate(a):
        if not x:
            continue
        for j, y in enumerate(b):
            if i + j >= n:
                break
            out[i + j] += x * y
    return out


def _upoly_add(a: list, b: list) -> list:
    if len(a) < len(b):
        a, b = b, a
    out = list(a)
    for i, y in enumerate(b):
        out[i] += y
    return out


def _compose_fixed(f: dict, P: dict, deg: int, bits: int) -> list:
    """Approximate f(P(tau)) with fixed-point integer coefficients."""
    scale = 1 << bits
    out = [0]
    for m, c in f.items():
        term = [round(c * scale)]
        for v, e in m:
            for _ in range(e):
                term = [x >> bits for x in _upoly_mul(term, P[v], deg)]
        out = _upoly_add(out, term)
    return out


def _compose_exact(f: dict, P: dict) -> list:
    out = [Fraction(0)]
    for m, c in f.items():
        term = [c]
        for v, e in m:
            for _ in range(e):
                term = _upoly_mul(term, P[v])
        out = _upoly_add(out, term)
    return out


def _sup_abs(cs: list, h: Fraction) -> Fraction:
    total, hp = Fraction(0), Fraction(1)
    for c in cs:
        total += abs(c) * hp
        hp *= h
    return total


def _upoly_range(cs: list, h: Fraction) -> Interval:
    tau = Interval(0, h)
    acc = Interval.point(0)
    for c in reversed(cs):
        acc = acc * tau + Interval.point(c)
    return acc


def picard_solve(sys: ODESystem, s0: State, d, k: int = DEFAULT_PRECISION,
                 degree: int = 12, max_steps: int = 1 << 14) -> SampledSolution:
    """Validated solution of a polynomial ODE over [0, d].

    Each step solves on [t0, t0+h] with a truncated Picard iteration in
    fixed-point arithmetic, then certifies it: an a priori box B with
    h*|F(B)| within its radius, a Lipschitz bound L on B with L*h <= 1/2,
    and the exact defect rho = sup|Phi(P) - P|.  The error bound is
    2*rho + r0*(1 + L*h + (L*h)**2), with r0 the incoming error.
    """
    d = Fraction(d)
    if d < 0:
        raise ValueError("duration must be nonnegative")
    try:
        field_ = sys.polys()
    except NotPolynomial as err:
        raise LipschitzBoundFailure(f"no interval Lipschitz bound: {err}") from None
    xs = sys.vars
    params = sorted(set().union(*(p_vars(f) for f in field_.values())) - set(xs))
    wp = k + 24
    par_iv = {p: s0.get(p).refine(wp) for p in params}
    if d == 0:
        return SampledSolution(sys, d, k, [], par_iv, Fraction(0), s0)
    n = max(4, int(d.__ceil__()) * 4)
    while n <= max_steps:
        try:
            steps, lip = _picard_run(field_, xs, params, par_iv, s0, d, n,
                                     degree, wp, k)
        except _Refine:
            n *= 2
            continue
        if max(st.err for st in steps) * 2 <= Fraction(1, 1 << k):
            return SampledSolution(sys, d, k, steps, par_iv, lip, s0)
        n *= 2
    raise LipschitzBoundFailure(f"could not certify the solution with {max_steps} steps")


class _Refine(Exception):
    pass


def _picard_run(field_, xs, params, par_iv, s0, d, n, degree, wp, k):
    h = d / n
    pmid = {p: _fix(iv.mid, wp) for p, iv in par_iv.items()}
    prad = max((iv.width / 2 + abs(iv.mid - pmid[p]) for p, iv in par_iv.items()),
               default=Fraction(0))
    f_mid = {x: p_subst(f, {p: p_const(pmid[p]) for p in params})
             for x, f in field_.items()}
    jac = {x: {y: p_deriv(f, y) for y in xs} for x, f in field_.items()}
    pjac = {x: {p: p_deriv(f, p) for p in params} for x, f in field_.items()}
    init = {x: s0.get(x).refine(wp) for x in xs}
    c = {x: _fix(init[x].mid, wp) for x in xs}
    r0 = max(init[x].width / 2 + abs(init[x].mid - c[x]) for x in xs)
    scale = 1 << wp
    steps, lip_max = [], Fraction(0)
    for i in range(n):
        # a priori enclosure
        rad = {x: r0 + Fraction(1, 1 << 10) for x in xs}
        for _ in range(30):
            box = {x: Interval(c[x] - rad[x], c[x] + rad[x]) for x in xs}
            box.update(par_iv)
            growth = {x: h * p_eval_interval(field_[x], box).mag() for x in xs}
            if all(r0 + growth[x] <= rad[x] for x in xs):
                break
            rad = {x: 2 * (r0 + growth[x]) + Fraction(1, 1 << 10) for x in xs}
        else:
            raise _Refine()
        lip = max(sum(p_eval_interval(jac[x][y], box).mag() for y in xs)
                  for x in xs)
        lip_p = max((sum(p_eval_interval(pjac[x][p], box).mag() for p in params)
                     for x in xs), default=Fraction(0))
        if lip * h > Fraction(1, 2):
            raise _Refine()
        lip_max = max(lip_max, lip)
        # fixed-point Picard iteration
        P = {x: [round(c[x] * scale)] for x in xs}
        for _ in range(degree + 1):
            newP = {}
            for x in xs:
                fx = _compose_fixed(f_mid[x], P, degree, wp)
                integ = [round(c[x] * scale)] + [
                    (fx[j] * h.numerator) // (h.denominator * (j + 1))
                    for j in range(len(fx))]
                newP[x] = integ[:degree + 1]
            P = newP
        # P is a polynomial in u = tau/h; convert to tau
        Pq = {x: [Fraction(v, scale) / h ** j for j, v in enumerate(P[x])]
              for x in xs}
        # certify
        rho = Fraction(0)
        for x in xs:
            rng = _upoly_range(Pq[x], h)
            if not rng.subset_of(box[x]):
                raise _Refine()
            fx = _compose_exact(f_mid[x], Pq)
            q = [c[x]] + [Fraction(cf) / (j + 1) for j, cf in enumerate(fx)]
            diff = _upoly_add(q, [-v for v in Pq[x]])
            rho = max(rho, _sup_abs(diff, h))
        rho += h * lip_p * prad
        lh = lip * h
        err = 2 * rho + r0 * (1 + lh + lh * lh)
        err = _fix_up(err, wp)
        steps.append(_Step(i * h, h, Pq, err))
        c = {x: _horner(Pq[x], h) for x in xs}
        c = {x: _fix(v, wp) for x, v in c.items()}
        end_exact = {x: _horner(Pq[x], h) for x in xs}
        r0 = err + max(abs(end_exact[x] - c[x]) for x in xs)
    return steps, lip_max


def _horner(cs: list, t: Fraction) -> Fraction:
    v = Fraction(0)
    for cf in reversed(cs):
        v = v * t + cf
    return v


def _fix_up(q: Fraction, bits: int) -> Fraction:
    scale = 1 << bits
    return Fraction(-((-q.numerator * scale) // q.denominator), scale)


# ------------------------------------------------------------ solves check

SOLVES_GRID = 1 << 7
SOLVES_TOL = Fraction(1, 1 << 20)


def _poly_or_none(t):
    try:
        return poly_from_term(t)
    except NotPolynomial:
        return None


def check_solves(sol, s: State, d, sys: ODESystem, tol=SOLVES_TOL,
                 grid: int = SOLVES_GRID, k: int = DEFAULT_PRECISION) -> bool:
    """Does ``sol`` solve ``sys`` from state ``s`` for duration ``d``?

    Symbolic and polynomial term solutions are checked exactly; anything
    else is checked by central finite differences on a sample grid.
    """
    tol = Fraction(tol)
    if isinstance(sol, SymbolicSolution):
        return sol.system.equations == sys.equations and sol.verify()
    if isinstance(sol, TermSolution):
        exact = _check_term_solution(sol, s, sys, tol, k)
        if exact is not None:
            return exact
    d = Fraction(d) if not isinstance(d, CReal) else d.refine(k).lo
    # initial value
    s0 = _sol_state(sol, s, Fraction(0))
    for x in sys.vars:
        if abs(s0.get(x).refine(k).mid - s.get(x).refine(k).mid) > tol:
            return False
    if d == 0:
        return True
    delta = d / (1 << 16)
    times = sorted({d * i / grid for i in range(grid + 1)})
    for r in times:
        lo, hi = max(Fraction(0), r - delta), min(d, r + delta)
        sa, sb, sr = (_sol_state(sol, s, lo), _sol_state(sol, s, hi),
                      _sol_state(sol, s, r))
        for x, f in sys.equations:
            deriv = (sb.get(x).refine(k).mid - sa.get(x).refine(k).mid) / (hi - lo)
            want = eval_term(f, sr, k).mid
            if abs(deriv - want) > tol * max(1, abs(want)) + _fd_slack(delta):
                return False
    return True


def _fd_slack(delta: Fraction) -> Fraction:
    # truncation error of a difference quotient scales with the step
    return 64 * delta


def _sol_state(sol, s: State, t: Fraction) -> State:
    if isinstance(sol, (SampledSolution, TermSolution)):
        return sol.state_at(s, t)
    if callable(sol):
        return s.update(sol(t))
    raise TypeError(f"not a solution: {sol!r}")


def _check_term_solution(sol: TermSolution, s: State, sys: ODESystem, tol, k):
    polys = {x: _poly_or_none(t) for x, t in sol.terms.items()}
    field_ = {}
    for x, f in sys.equations:
        field_[x] = _poly_or_none(f)
    if any(p is None for p in polys.values()) or any(p is None for p in field_.values()):
        return None
    if set(polys) != set(sys.vars):
        return False
    for x in sys.vars:
        at0 = p_subst(polys[x], {sol.time_var: p_const(0)})
        diff = p_add(at0, p_scale(p_var(x), -1))
        if diff:
            iv = eval_term(poly_to_term(diff), s, k)
            if not (iv.lo == iv.hi == 0):
                return False
        lhs = p_deriv(polys[x], sol.time_var)
        rhs = p_subst(field_[x], polys)
        if p_add(lhs, p_scale(rhs, -1)):
            return False
    return True


# ---------------------------------------------------------- differentials

ZERO_T = S.lit(0)


def _is_zero(t) -> bool:
    return isinstance(t, S.RealLit) and t.value == 0


def _is_one(t) -> bool:
    return isinstance(t, S.RealLit) and t.value == 1


def _add(a, b):
    if _is_zero(a):
        return b
    if _is_zero(b):
        return a
    return S.Plus(a, b)


def _mul(a, b):
    if _is_zero(a) or _is_zero(b):
        return ZERO_T
    if _is_one(a):
        return b
    if _is_one(b):
        return a
    return S.Times(a, b)


def _neg(a):
    return ZERO_T if _is_zero(a) else S.Neg(a)


def total_differential(t):
    """Symbolic (t)' = sum over x of dt/dx * x'."""
    match t:
        case S.RealLit():
            return ZERO_T
        case S.Var(x):
            return S.PrimedVar(x)
        case S.PrimedVar(x):
            raise NonDifferentiable(f"nested prime on {x}'")
        case S.Plus(a, b):
            return _add(total_differential(a), total_differential(b))
        case S.Neg(a):
            return _neg(total_differential(a))
        case S.Times(a, b):
            return _add(_mul(total_differential(a), b),
                        _mul(a, total_differential(b)))
        case S.Div(a, b):
            da, db = total_differential(a), total_differential(b)
            if _is_zero(db):
                return ZERO_T if _is_zero(da) else S.Div(da, b)
            num = _add(_mul(da, b), _neg(_mul(a, db)))
            return S.Div(num, S.Times(b, b))
        case S.Sqrt(a):
            da = total_differential(a)
            if _is_zero(da):
                return ZERO_T
            return S.Div(da, S.Times(S.lit(2), S.Sqrt(a)))
        case S.Min() | S.Max():
            raise NonDifferentiable(f"{S.pretty(t)} is not differentiable")
        case S.Differential(a):
            raise NonDifferentiable(f"nested differential {S.pretty(t)}")
        case S.Tuple():
            raise NonDifferentiable("tuples have no differential")
    raise TypeError(f"not a term: {t!r}")


def expand_differentials(t):
    """Replace every (f)' inside a term by its total differential."""
    match t:
        case S.Differential(a):
            return total_differential(expand_differentials(a))
        case S.Plus(a, b) | S.Times(a, b) | S.Div(a, b) | S.Min(a, b) | S.Max(a, b):
            return type(t)(expand_differentials(a), expand_differentials(b))
        case S.Neg(a) | S.Sqrt(a):
            return type(t)(expand_differentials(a))
        case S.Tuple(items):
            return S.Tuple(tuple(map(expand_differentials, items)))
    return t


def differential_eval(t, s: State, k: int = DEFAULT_PRECISION) -> Interval:
    return eval_term(total_differential(t), s, k)
