"""Constructive reals as memoized interval refinements.

A ``CReal`` answers ``refine(k)`` with an interval of rational endpoints and
width at most ``2**-k`` that contains its value.  Answers for increasing
``k`` are nested no matter in which order they are requested.  Equality is
not decidable; ``cmp_eps`` decides ``f > g`` versus ``f < g + eps`` instead.
"""

from __future__ import annotations

import bisect
import enum
import threading
from dataclasses import dataclass
from fractions import Fraction
from math import isqrt

from . import syntax as S


class EvalError(Exception):
    pass


class DivisionNearZero(EvalError):
    pass


class SqrtOfNegative(EvalError):
    pass


# refinement effort spent on a divisor before giving up
DIVISION_EFFORT = 256
DEFAULT_PRECISION = 53
# extra bits cmp_eps spends trying to certify GT
CMP_SLACK = 32


@dataclass(frozen=True)
class Interval:
    lo: Fraction
    hi: Fraction

    def __post_init__(self):
        object.__setattr__(self, "lo", Fraction(self.lo))
        object.__setattr__(self, "hi", Fraction(self.hi))
        if self.lo > self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    @staticmethod
    def point(q) -> "Interval":
        q = Fraction(q)
        return Interval(q, q)

    @property
    def width(self) -> Fraction:
        return self.hi - self.lo

    @property
    def mid(self) -> Fraction:
        return (self.lo + self.hi) / 2

    def contains(self, q) -> bool:
        return self.lo <= q <= self.hi

    def subset_of(self, other: "Interval") -> bool:
        return other.lo <= self.lo and self.hi <= other.hi

    def overlaps(self, other: "Interval") -> bool:
        return self.lo <= other.hi and other.lo <= self.hi

    def intersect(self, other: "Interval") -> "Interval":
        return Interval(max(self.lo, other.lo), min(self.hi, other.hi))

    def hull(self, other: "Interval") -> "Interval":
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))

    def mag(self) -> Fraction:
        return max(abs(self.lo), abs(self.hi))

    def __add__(self, o: "Interval") -> "Interval":
        return Interval(self.lo + o.lo, self.hi + o.hi)

    def __sub__(self, o: "Interval") -> "Interval":
        return Interval(self.lo - o.hi, self.hi - o.lo)

    def __neg__(self) -> "Interval":
        return Interval(-self.hi, -self.lo)

    def __mul__(self, o: "Interval") -> "Interval":
        ps = (self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi)
        return Interval(min(ps), max(ps))

    def scale(self, q) -> "Interval":
        q = Fraction(q)
        a, b = self.lo * q, self.hi * q
        return Interval(min(a, b), max(a, b))

    def recip(self) -> "Interval":
        if self.lo <= 0 <= self.hi:
            raise DivisionNearZero(f"divisor interval {self} contains 0")
        return Interval(1 / self.hi, 1 / self.lo)

    def to_json(self) -> dict:
        return {"lo": _q(self.lo), "hi": _q(self.hi)}

    @staticmethod
    def from_json(d: dict) -> "Interval":
        return Interval(Fraction(d["lo"]), Fraction(d["hi"]))

    def __repr__(self):
        return f"[{_q(self.lo)}, {_q(self.hi)}]"


def _q(x: Fraction) -> str:
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


def round_out(iv: Interval, bits: int) -> Interval:
    """Round outward to the dyadic grid ``2**-bits`` when denominators grow
    large; intervals with modest denominators are returned unchanged."""
    if (iv.lo.denominator.bit_length() <= bits + 8
            and iv.hi.denominator.bit_length() <= bits + 8):
        return iv
    scale = 1 << bits
    lo = Fraction((iv.lo.numerator * scale) // iv.lo.denominator, scale)
    hi = Fraction(-((-iv.hi.numerator * scale) // iv.hi.denominator), scale)
    return Interval(lo, hi)


class CReal:
    """Base class: subclasses implement ``_raw(k)``."""

    def __init__(self):
        self._lock = threading.Lock()
        self._keys: list[int] = []
        self._memo: dict[int, Interval] = {}

    def _raw(self, k: int) -> Interval:
        raise NotImplementedError

    def refine(self, k: int) -> Interval:
        if k < 0:
            raise ValueError("precision must be nonnegative")
        with self._lock:
            hit = self._memo.get(k)
            if hit is not None:
                return hit
            pos = bisect.bisect_left(self._keys, k)
            if pos < len(self._keys):
                # a finer answer exists; reusing it keeps the chain nested
                iv = self._memo[self._keys[pos]]
            else:
                iv = self._raw(k)
                if pos > 0:
                    iv = iv.intersect(self._memo[self._keys[pos - 1]])
            self._keys.insert(pos, k)
            self._memo[k] = iv
            return iv

    # arithmetic sugar
    def __add__(self, o):
        return Add(self, as_creal(o))

    def __radd__(self, o):
        return Add(as_creal(o), self)

    def __sub__(self, o):
        return Add(self, Neg(as_creal(o)))

    def __rsub__(self, o):
        return Add(as_creal(o), Neg(self))

    def __mul__(self, o):
        return Mul(self, as_creal(o))

    def __rmul__(self, o):
        return Mul(as_creal(o), self)

    def __truediv__(self, o):
        return Div(self, as_creal(o))

    def __rtruediv__(self, o):
        return Div(as_creal(o), self)

    def __neg__(self):
        return Neg(self)

    def exact(self) -> Fraction | None:
        """The rational value if it is known exactly, else None."""
        return None

    def approx(self, k: int = DEFAULT_PRECISION) -> float:
        return float(self.refine(k).mid)

    def __repr__(self):
        return f"CReal~{self.refine(20)}"


class Exact(CReal):
    def __init__(self, q):
        super().__init__()
        self.q = Fraction(q)
        self._iv = Interval(self.q, self.q)

    def _raw(self, k):
        return self._iv

    def refine(self, k):
        return self._iv

    def exact(self):
        return self.q

    def __repr__(self):
        return f"Exact({_q(self.q)})"


class FromFunction(CReal):
    """Wrap ``fn(k) -> Interval`` (width at most ``2**-k``)."""

    def __init__(self, fn):
        super().__init__()
        self.fn = fn

    def _raw(self, k):
        return self.fn(k)


def as_creal(x) -> CReal:
    if isinstance(x, CReal):
        return x
    return Exact(Fraction(x))


def _tiny(k: int) -> Fraction:
    return Fraction(1, 1 << k)


def _adaptive(k: int, compute, start: int = 2, step: int = 8,
              limit: int = 4096) -> Interval:
    """Call ``compute(j)`` for growing child precision j until the result
    is narrow enough for ``2**-k`` after outward rounding."""
    target = _tiny(k + 1)
    j = k + start
    while True:
        iv = compute(j)
        if iv.width <= target:
            return round_out(iv, k + 2)
        if j - k > limit:
            raise EvalError(f"refinement did not converge at precision {k}")
        j += step


class Add(CReal):
    def __init__(self, a, b):
        super().__init__()
        self.a, self.b = a, b

    def _raw(self, k):
        return _adaptive(k, lambda j: self.a.refine(j) + self.b.refine(j))


class Neg(CReal):
    def __init__(self, a):
        super().__init__()
        self.a = a

    def _raw(self, k):
        return -self.a.refine(k)


def _mag_bits(*xs: CReal) -> int:
    m = max(x.refine(0).mag() for x in xs)
    return int(m).bit_length() + 1


class Mul(CReal):
    def __init__(self, a, b):
        super().__init__()
        self.a, self.b = a, b

    def _raw(self, k):
        start = _mag_bits(self.a, self.b) + 2
        return _adaptive(k, lambda j: self.a.refine(j) * self.b.refine(j),
                         start=start)


class Div(CReal):
    def __init__(self, a, b):
        super().__init__()
        self.a, self.b = a, b
        self._den_bits = None

    def _divisor_bits(self) -> int:
        # smallest precision at which the divisor excludes 0
        if self._den_bits is None:
            j = 0
            while True:
                iv = self.b.refine(j)
                if not iv.contains(0):
                    lowmag = min(abs(iv.lo), abs(iv.hi))
                    self._den_bits = (j, lowmag)
                    break
                if j > DIVISION_EFFORT:
                    raise DivisionNearZero(
                        f"divisor still contains 0 at precision {j}: {iv}")
                j = j + 4 if j < 16 else j * 2
        return self._den_bits

    def _raw(self, k):
        j0, lowmag = self._divisor_bits()
        # |1/b| <= 1/lowmag; scale the requested precision accordingly
        inv_bits = (1 / lowmag).__ceil__().bit_length()
        start = max(2 * inv_bits + _mag_bits(self.a) + 2, j0 - k)

        def compute(j):
            ib = self.b.refine(max(j, j0))
            return self.a.refine(j) * ib.recip()
        return _adaptive(k, compute, start=start)


class Min(CReal):
    def __init__(self, a, b):
        super().__init__()
        self.a, self.b = a, b

    def _raw(self, k):
        x, y = self.a.refine(k), self.b.refine(k)
        return Interval(min(x.lo, y.lo), min(x.hi, y.hi))


class Max(CReal):
    def __init__(self, a, b):
        super().__init__()
        self.a, self.b = a, b

    def _raw(self, k):
        x, y = self.a.refine(k), self.b.refine(k)
        return Interval(max(x.lo, y.lo), max(x.hi, y.hi))


def _sqrt_floor(q: Fraction, bits: int) -> Fraction:
    scale = 1 << bits
    return Fraction(isqrt((q.numerator * scale * scale) // q.denominator), scale)


def _sqrt_ceil(q: Fraction, bits: int) -> Fraction:
    scale = 1 << bits
    n = -((-q.numerator * scale * scale) // q.denominator)
    r = isqrt(n)
    if r * r < n:
        r += 1
    return Fraction(r, scale)


def exact_sqrt(q: Fraction) -> Fraction | None:
    if q < 0:
        return None
    a, b = isqrt(q.numerator), isqrt(q.denominator)
    if a * a == q.numerator and b * b == q.denominator:
        return Fraction(a, b)
    return None


class Sqrt(CReal):
    """Square root.  A negative argument is an error once certified; an
    argument interval that straddles 0 is clipped to its nonnegative part."""

    def __init__(self, a):
        super().__init__()
        self.a = a

    def _raw(self, k):
        def compute(j):
            iv = self.a.refine(j)
            if iv.hi < 0:
                raise SqrtOfNegative(f"sqrt of negative value {iv}")
            lo = max(iv.lo, Fraction(0))
            if lo == iv.hi:
                r = exact_sqrt(lo)
                if r is not None:
                    return Interval(r, r)
            return Interval(_sqrt_floor(lo, k + 3), _sqrt_ceil(iv.hi, k + 3))
        # away from 0, |sqrt a - sqrt b| <= |a - b| / (2 sqrt(lo))
        lo = self.a.refine(4).lo
        if lo > 0:
            start = ((1 / lo).__ceil__().bit_length() + 1) // 2 + 3
            return _adaptive(k, compute, start=start)
        return _adaptive(k, compute, start=k + 4, step=k + 8)

    def exact(self):
        q = self.a.exact()
        return None if q is None else exact_sqrt(q)


# ------------------------------------------------------------ comparison

class Order(enum.Enum):
    GT = "GT"
    LT_PLUS_EPS = "LT_PLUS_EPS"


def cmp_creal(f: CReal, g: CReal, eps) -> Order:
    """Decide ``f > g`` or ``f < g + eps``.  Always terminates for eps > 0.

    When both hold, GT is preferred as long as the difference is certified
    positive before its interval narrows below ``eps * 2**-CMP_SLACK``.
    """
    eps = Fraction(eps)
    if eps <= 0:
        raise ValueError("eps must be positive")
    d = Add(f, Neg(g))
    floor_width = eps / (1 << CMP_SLACK)
    k = 0
    while True:
        iv = d.refine(k)
        if iv.lo > 0:
            return Order.GT
        if iv.hi <= 0 or (iv.hi < eps and iv.width <= floor_width):
            return Order.LT_PLUS_EPS
        k += 4


def cmp_eps(f, g, eps, s: "State | None" = None) -> Order:
    """``cmp_eps`` over terms evaluated in state ``s`` (or over CReals)."""
    s = s if s is not None else State()
    fc = f if isinstance(f, CReal) else term_creal(f, s)
    gc = g if isinstance(g, CReal) else term_creal(g, s)
    return cmp_creal(fc, gc, eps)


# ------------------------------------------------------------------ state

ZERO = Exact(0)


class State:
    """Persistent map from variable names (primed included) to CReals.
    Unassigned variables read as 0."""

    __slots__ = ("_vals",)

    def __init__(self, vals: dict | None = None):
        self._vals = {x: as_creal(v) for x, v in (vals or {}).items()}

    def get(self, x: str) -> CReal:
        return self._vals.get(x, ZERO)

    def __getitem__(self, x: str) -> CReal:
        return self.get(x)

    def set(self, x: str, v) -> "State":
        new = State.__new__(State)
        new._vals = dict(self._vals)
        new._vals[x] = as_creal(v)
        return new

    def update(self, vals: dict) -> "State":
        new = State.__new__(State)
        new._vals = dict(self._vals)
        for x, v in vals.items():
            new._vals[x] = as_creal(v)
        return new

    def names(self) -> list[str]:
        return sorted(self._vals)

    def items(self):
        return sorted(self._vals.items())

    def snapshot(self, k: int = DEFAULT_PRECISION) -> dict:
        return {x: v.refine(k) for x, v in sorted(self._vals.items())}

    def __contains__(self, x):
        return x in self._vals

    def __repr__(self):
        return "State(" + ", ".join(f"{x}={v!r}" for x, v in self.items()) + ")"


# ------------------------------------------------------- term evaluation

def term_creal(t, s: State) -> CReal:
    """Build the CReal denoted by term ``t`` in state ``s``."""
    match t:
        case S.RealLit(q):
            return Exact(q)
        case S.Var(x):
            return s.get(x)
        case S.PrimedVar(x):
            return s.get(x + "'")
        case S.Plus(a, b):
            ca, cb = term_creal(a, s), term_creal(b, s)
            qa, qb = ca.exact(), cb.exact()
            if qa is not None and qb is not None:
                return Exact(qa + qb)
            return Add(ca, cb)
        case S.Times(a, b):
            ca, cb = term_creal(a, s), term_creal(b, s)
            qa, qb = ca.exact(), cb.exact()
            if qa is not None and qb is not None:
                return Exact(qa * qb)
            return Mul(ca, cb)
        case S.Div(a, b):
            ca, cb = term_creal(a, s), term_creal(b, s)
            qa, qb = ca.exact(), cb.exact()
            if qb == 0:
                raise DivisionNearZero("division by exact zero")
            if qa is not None and qb is not None:
                return Exact(qa / qb)
            return Div(ca, cb)
        case S.Neg(a):
            ca = term_creal(a, s)
            qa = ca.exact()
            return Exact(-qa) if qa is not None else Neg(ca)
        case S.Min(a, b):
            return Min(term_creal(a, s), term_creal(b, s))
        case S.Max(a, b):
            return Max(term_creal(a, s), term_creal(b, s))
        case S.Sqrt(a):
            ca = term_creal(a, s)
            qa = ca.exact()
            if qa is not None:
                if qa < 0:
                    raise SqrtOfNegative(f"sqrt of {qa}")
                r = exact_sqrt(qa)
                if r is not None:
                    return Exact(r)
            return Sqrt(ca)
        case S.Differential():
            raise EvalError("differential terms need ode.differential_eval")
        case S.Tuple():
            raise EvalError("tuples have no real value")
    raise TypeError(f"not a term: {t!r}")


def eval_term(t, s: State, k: int = DEFAULT_PRECISION) -> Interval:
    return term_creal(t, s).refine(k)
