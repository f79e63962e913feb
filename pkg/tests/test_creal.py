import math
from fractions import Fraction

import pytest

from cdgl import syntax as S
from cdgl.creal import (DivisionNearZero, Exact, Interval, Order, SqrtOfNegative,
                        State, as_creal, cmp_creal, eval_term)


def ev(text, state=None, k=53):
    return eval_term(S.parse(text, "term"), State(state or {}), k)


def test_rational_arithmetic_is_exact():
    iv = ev("1/3 + 1/6 * 2")
    assert iv.lo == iv.hi == Fraction(2, 3)


@pytest.mark.parametrize("k", [10, 30, 53, 100])
def test_sqrt_two_width_and_containment(k):
    iv = ev("sqrt(2)", k=k)
    assert iv.width <= Fraction(1, 2 ** k)
    assert iv.lo * iv.lo <= 2 <= iv.hi * iv.hi


def test_sqrt_of_square_is_exact():
    assert ev("sqrt(9/4)").lo == Fraction(3, 2)


def test_nested_sqrt_precision():
    iv = ev("sqrt(sqrt(sqrt(2)))", k=80)
    assert iv.width <= Fraction(1, 2 ** 80)
    assert iv.lo <= Fraction(2 ** 0.125) + Fraction(1, 2 ** 40)


def test_min_of_equal_values_is_exact():
    t = S.Min(S.lit(Fraction(1, 3)), S.Div(S.lit(2), S.lit(6)))
    iv = eval_term(t, State())
    assert iv.lo == iv.hi == Fraction(1, 3)


def test_min_max_with_irrationals():
    iv = ev("max(sqrt(2), 7/5)")
    assert abs(iv.mid - Fraction(math.sqrt(2))) < Fraction(1, 10 ** 12)


def test_division_by_zero_is_reported():
    with pytest.raises(DivisionNearZero):
        ev("1 / (x - x)", {"x": 3})


def test_sqrt_of_negative_is_reported():
    with pytest.raises(SqrtOfNegative):
        ev("sqrt(0 - 1)")


def test_cmp_creal_orders():
    eps = Fraction(1, 2 ** 20)
    assert cmp_creal(as_creal(1), as_creal(0), eps) is Order.GT
    assert cmp_creal(as_creal(0), as_creal(0), eps) is Order.LT_PLUS_EPS


def test_interval_ops():
    a, b = Interval(-1, 2), Interval(3, 4)
    assert (a * b).lo == -4 and (a * b).hi == 8
    assert (a + b).to_json() == {"lo": "2", "hi": "6"}
    assert a.contains(0) and not b.contains(0)


def test_state_is_persistent():
    s = State({"x": 1})
    t = s.set("x", Exact(Fraction(2)))
    assert s.get("x").refine(10).lo == 1
    assert t.get("x").refine(10).lo == 2
    assert "x" in t.names()
