import random
from fractions import Fraction

import pytest

from cdgl import syntax as S

from randgen import rand_formula, rand_game, rand_term


@pytest.mark.parametrize("seed", range(40))
def test_pretty_parse_round_trip(seed):
    rng = random.Random(seed)
    for kind, e in (("term", rand_term(rng, 4)), ("game", rand_game(rng, 4)),
                    ("formula", rand_formula(rng, 3))):
        assert S.desugar(S.parse(S.pretty(e), kind)) == S.desugar(e)


def test_precedence_and_associativity():
    t = S.parse("1 + 2 * x - y", "term")
    assert S.pretty(t) == "1+2*x-y"
    g = S.parse("a := 1; b := 2 ++ c := 3", "game")
    assert isinstance(g, S.Choice) and isinstance(g.left, S.Seq)


def test_power_exponent_is_an_integer():
    # "2/8" after ^ must not lex as a rational literal
    t = S.parse("T^2/8", "term")
    assert isinstance(t, S.Div)
    assert t.right == S.lit(8)


def test_rational_and_decimal_literals():
    assert S.parse("2/6", "term") == S.lit(Fraction(1, 3))
    assert S.parse("0.25", "term") == S.lit(Fraction(1, 4))


def test_unicode_operators():
    a = S.parse("x ≥ 0 ∧ ¬(y ≤ 1)")
    b = S.parse("x >= 0 & !(y <= 1)")
    assert S.desugar(a) == S.desugar(b)


def test_sugar_round_trip():
    f = S.parse("\\forall x (x > 0 -> x >= 0) | y = 1")
    core = S.desugar(f)
    assert not S.contains_sugar(core)
    assert S.desugar(S.resugar(core)) == core


def test_ode_and_dual_forms():
    g = S.parse("{x'=v, v'=a & v >= 0}^d", "game")
    assert isinstance(g, S.Dual) and isinstance(g.body, S.ODE)
    assert g.body.vars == ("x", "v")


def test_module_expands_names():
    mod = S.parse_module("const T = 2\nterm half = T/2\nformula ok = x <= half\n")
    assert S.pretty(mod.formulas["ok"]) == "x<=2 / 2"
    assert "half" in mod.env


def test_parse_error_has_position():
    with pytest.raises(S.ParseError) as err:
        S.parse("x + * 2", "term")
    assert err.value.line == 1 and err.value.col >= 1


def test_duplicate_ode_variable_rejected():
    with pytest.raises((ValueError, S.ParseError)):
        S.parse("{x'=1, x'=2}", "game")
