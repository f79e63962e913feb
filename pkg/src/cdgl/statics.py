"""Free, bound and must-bound variables, renaming and substitution.

Variable sets hold plain names; a primed variable ``x'`` is the distinct
member ``"x'"``.  Derived connectives are handled through their desugared
meaning.
"""

from __future__ import annotations

from . import syntax as S


class AdmissibilityError(Exception):
    def __init__(self, var: str, binder: str, path: str):
        super().__init__(f"substituting {var} would be captured by binder "
                         f"{binder} at {path or '<root>'}")
        self.var, self.binder, self.path = var, binder, path


# ------------------------------------------------------------------- FV

def free_vars(e) -> frozenset:
    match e:
        case S.RealLit():
            return frozenset()
        case S.Var(x):
            return frozenset({x})
        case S.PrimedVar(x):
            return frozenset({x + "'"})
        case S.Differential(a):
            fa = free_vars(a)
            return fa | {S.prime(x) for x in fa if not S.is_primed(x)}
        case S.Neg(a) | S.Sqrt(a):
            return free_vars(a)
        case S.Plus(a, b) | S.Times(a, b) | S.Div(a, b) | S.Min(a, b) | S.Max(a, b):
            return free_vars(a) | free_vars(b)
        case S.Tuple(items):
            return frozenset().union(*map(free_vars, items))
        case S.Cmp(a, _, b):
            return free_vars(a) | free_vars(b)
        case S.Diamond(g, p) | S.Box(g, p):
            return free_vars(g) | (free_vars(p) - must_bound_vars(g))
        case S.Test(c):
            return free_vars(c)
        case S.Assign(_, t):
            return free_vars(t)
        case S.AssignAny():
            return frozenset()
        case S.ODE(eqs, dom):
            out = set(v for v, _ in eqs)
            for _, t in eqs:
                out |= free_vars(t)
            return frozenset(out) | free_vars(dom)
        case S.Choice(a, b):
            return free_vars(a) | free_vars(b)
        case S.Seq(a, b):
            return free_vars(a) | (free_vars(b) - must_bound_vars(a))
        case S.Repeat(a) | S.Dual(a):
            return free_vars(a)
    if isinstance(e, S.SUGAR_TYPES):
        return free_vars(S.desugar(e))
    raise TypeError(f"not an expression: {e!r}")


def bound_vars(g) -> frozenset:
    match g:
        case S.Test():
            return frozenset()
        case S.Assign(x, _) | S.AssignAny(x):
            return frozenset({x})
        case S.ODE(eqs, _):
            return frozenset(v for v, _ in eqs) | {S.prime(v) for v, _ in eqs}
        case S.Choice(a, b) | S.Seq(a, b) | S.DChoice(a, b):
            return bound_vars(a) | bound_vars(b)
        case S.Repeat(a) | S.Dual(a) | S.DRepeat(a):
            return bound_vars(a)
    raise TypeError(f"not a game: {g!r}")


def must_bound_vars(g) -> frozenset:
    match g:
        case S.Test():
            return frozenset()
        case S.Assign(x, _) | S.AssignAny(x):
            return frozenset({x})
        case S.ODE():
            return bound_vars(g)
        case S.Choice(a, b) | S.DChoice(a, b):
            return must_bound_vars(a) & must_bound_vars(b)
        case S.Seq(a, b):
            return must_bound_vars(a) | must_bound_vars(b)
        case S.Repeat() | S.DRepeat():
            return frozenset()
        case S.Dual(a):
            return must_bound_vars(a)
    raise TypeError(f"not a game: {g!r}")


def all_vars(e) -> frozenset:
    """Every variable name mentioned anywhere, binders included."""
    out = set()
    for n in S.walk(e):
        match n:
            case S.Var(x) | S.AssignAny(x):
                out.add(x)
            case S.PrimedVar(x):
                out.add(x + "'")
            case S.Assign(x, _):
                out.add(x)
            case S.ODE(eqs, _):
                for v, _ in eqs:
                    out.update((v, S.prime(v)))
            case S.Forall(x, _) | S.Exists(x, _):
                out.add(x)
            case S.Differential(a):
                out.update(S.prime(v) for v in free_vars(a)
                           if not S.is_primed(v))
    return frozenset(out)


def fresh_name(base: str, avoid, start: int = 0) -> str:
    """First of base0, base1, ... not in ``avoid`` (primes included)."""
    i = start
    while True:
        cand = f"{base}{i}"
        if cand not in avoid and S.prime(cand) not in avoid:
            return cand
        i += 1


# --------------------------------------------------------------- rename

def _swap(name: str, x: str, y: str) -> str:
    base, primed = S.unprime(name), S.is_primed(name)
    if base == x:
        base = y
    elif base == y:
        base = x
    return S.prime(base) if primed else base


def rename(e, x: str, y: str):
    """Transposition renaming: swap x and y (and x', y') everywhere."""
    if x == y:
        return e
    r = lambda n: rename(n, x, y)  # noqa: E731
    match e:
        case S.RealLit():
            return e
        case S.Var(v):
            return S.Var(_swap(v, x, y))
        case S.PrimedVar(v):
            return S.PrimedVar(_swap(v, x, y))
        case S.Plus(a, b):
            return S.Plus(r(a), r(b))
        case S.Times(a, b):
            return S.Times(r(a), r(b))
        case S.Div(a, b):
            return S.Div(r(a), r(b))
        case S.Min(a, b):
            return S.Min(r(a), r(b))
        case S.Max(a, b):
            return S.Max(r(a), r(b))
        case S.Neg(a):
            return S.Neg(r(a))
        case S.Sqrt(a):
            return S.Sqrt(r(a))
        case S.Differential(a):
            return S.Differential(r(a))
        case S.Tuple(items):
            return S.Tuple(tuple(map(r, items)))
        case S.Cmp(a, rel, b):
            return S.Cmp(r(a), rel, r(b))
        case S.Diamond(g, p):
            return S.Diamond(r(g), r(p))
        case S.Box(g, p):
            return S.Box(r(g), r(p))
        case S.Test(c):
            return S.Test(r(c))
        case S.Assign(v, t):
            return S.Assign(_swap(v, x, y), r(t))
        case S.AssignAny(v):
            return S.AssignAny(_swap(v, x, y))
        case S.ODE(eqs, dom):
            return S.ODE(tuple((_swap(v, x, y), r(t)) for v, t in eqs), r(dom))
        case S.Choice(a, b):
            return S.Choice(r(a), r(b))
        case S.Seq(a, b):
            return S.Seq(r(a), r(b))
        case S.Repeat(a):
            return S.Repeat(r(a))
        case S.Dual(a):
            return S.Dual(r(a))
        case S.DChoice(a, b):
            return S.DChoice(r(a), r(b))
        case S.DRepeat(a):
            return S.DRepeat(r(a))
        case S.Verum() | S.Falsum():
            return e
        case S.And(a, b):
            return S.And(r(a), r(b))
        case S.Or(a, b):
            return S.Or(r(a), r(b))
        case S.Implies(a, b):
            return S.Implies(r(a), r(b))
        case S.Iff(a, b):
            return S.Iff(r(a), r(b))
        case S.Not(a):
            return S.Not(r(a))
        case S.Forall(v, b):
            return S.Forall(_swap(v, x, y), r(b))
        case S.Exists(v, b):
            return S.Exists(_swap(v, x, y), r(b))
    raise TypeError(f"not an expression: {e!r}")


# ----------------------------------------------------------- substitute

def substitute(e, x: str, f):
    """Replace free ``x`` by term ``f``; raise AdmissibilityError when a
    free occurrence of x sits under a binder of FV(f) or under a binder
    that only may (not must) rebind x."""
    return substitute_many(e, {x: f})


def substitute_many(e, sigma: dict):
    """Simultaneous admissible substitution of terms for variables."""
    danger = {x: free_vars(f) | {x} for x, f in sigma.items()}
    return _Subst(sigma, danger).go(e, frozenset(), "")


class _Subst:
    def __init__(self, sigma, danger):
        self.sigma, self.danger = sigma, danger

    def without(self, names) -> "_Subst":
        """Substitution for a scope where ``names`` are must-bound, so
        their later occurrences are no longer free."""
        drop = set(names) & set(self.sigma)
        if not drop:
            return self
        keep = {x: f for x, f in self.sigma.items() if x not in drop}
        return _Subst(keep, {x: self.danger[x] for x in keep})

    def check(self, x: str, bound: frozenset, path: str):
        hit = bound & self.danger[x]
        if hit:
            raise AdmissibilityError(x, sorted(hit)[0], path)

    def go(self, e, bound: frozenset, path: str):
        g = self.go
        p = lambda tag: f"{path}/{tag}" if path else tag  # noqa: E731
        match e:
            case S.RealLit() | S.PrimedVar():
                return e
            case S.Var(v):
                if v in self.sigma:
                    self.check(v, bound, path)
                    return self.sigma[v]
                return e
            case S.Differential(a):
                hit = free_vars(a) & set(self.sigma)
                if hit:
                    raise AdmissibilityError(sorted(hit)[0], "(.)'", path)
                return e
            case S.Plus(a, b) | S.Times(a, b) | S.Div(a, b) | S.Min(a, b) | S.Max(a, b):
                return type(e)(g(a, bound, p("l")), g(b, bound, p("r")))
            case S.Neg(a) | S.Sqrt(a):
                return type(e)(g(a, bound, p("arg")))
            case S.Tuple(items):
                return S.Tuple(tuple(g(t, bound, p(str(i)))
                                     for i, t in enumerate(items)))
            case S.Cmp(a, rel, b):
                return S.Cmp(g(a, bound, p("l")), rel, g(b, bound, p("r")))
            case S.Diamond(gm, post) | S.Box(gm, post):
                gm2 = g(gm, bound, p("game"))
                rest = self.without(must_bound_vars(gm))
                post2 = rest.go(post, bound | bound_vars(gm), p("post"))
                return type(e)(gm2, post2)
            case S.Test(c):
                return S.Test(g(c, bound, p("test")))
            case S.Assign(v, t):
                return S.Assign(v, g(t, bound, p("rhs")))
            case S.AssignAny():
                return e
            case S.ODE(eqs, dom):
                inner = bound | bound_vars(e)
                for v, _ in eqs:
                    if v in self.sigma:
                        raise AdmissibilityError(v, v, p("ode"))
                return S.ODE(tuple((v, g(t, inner, p(f"{v}'")))
                                   for v, t in eqs), g(dom, inner, p("domain")))
            case S.Choice(a, b) | S.DChoice(a, b):
                return type(e)(g(a, bound, p("l")), g(b, bound, p("r")))
            case S.Seq(a, b):
                rest = self.without(must_bound_vars(a))
                return S.Seq(g(a, bound, p("l")),
                             rest.go(b, bound | bound_vars(a), p("r")))
            case S.Repeat(a) | S.DRepeat(a):
                return type(e)(g(a, bound | bound_vars(a), p("loop")))
            case S.Dual(a):
                return S.Dual(g(a, bound, p("dual")))
            case S.Verum() | S.Falsum():
                return e
            case S.And(a, b) | S.Or(a, b) | S.Implies(a, b) | S.Iff(a, b):
                return type(e)(g(a, bound, p("l")), g(b, bound, p("r")))
            case S.Not(a):
                return S.Not(g(a, bound, p("not")))
            case S.Forall(v, b) | S.Exists(v, b):
                return type(e)(v, self.without({v}).go(b, bound | {v}, p(f"bind:{v}")))
        raise TypeError(f"not an expression: {e!r}")
