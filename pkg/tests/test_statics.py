import random

import pytest

from cdgl import syntax as S
from cdgl.statics import (AdmissibilityError, bound_vars, free_vars, fresh_name,
                          must_bound_vars, rename, substitute)

import props

PLANT = "{t'=1, x'=v, v'=a & t<=T & v>=0}^d"


def g(text):
    return S.parse(text, "game")


def test_plant_tables():
    p = g(PLANT)
    assert bound_vars(p) == {"t", "x", "v", "t'", "x'", "v'"}
    assert must_bound_vars(p) == bound_vars(p)
    assert free_vars(p) == {"t", "x", "v", "a", "T"}


@pytest.mark.parametrize("text,fv,bv,mbv", [
    ("x := y + 1", {"y"}, {"x"}, {"x"}),
    ("x := *", set(), {"x"}, {"x"}),
    ("?x > y", {"x", "y"}, set(), set()),
    ("x := 1 ++ y := 2", set(), {"x", "y"}, set()),
    ("x := 1; y := x", set(), {"x", "y"}, {"x", "y"}),
    ("{x := x + 1}*", {"x"}, {"x"}, set()),
    ("{x := 1 ++ x := 2}^d", set(), {"x"}, {"x"}),
])
def test_game_tables(text, fv, bv, mbv):
    e = g(text)
    assert free_vars(e) == fv
    assert bound_vars(e) == bv
    assert must_bound_vars(e) == mbv


def test_formula_free_vars():
    f = S.parse("[x := y]x > z")
    assert free_vars(f) == {"y", "z"}


def test_fresh_name_skips_used():
    assert fresh_name("x", {"x", "x0", "x1"}) == "x2"


def test_rename_swaps_both_ways():
    f = S.parse("[x := y]x > y")
    assert rename(f, "x", "y") == S.parse("[y := x]y > x")


def test_substitute_stops_at_must_bound():
    f = S.parse("[x := 1]x > 0")
    assert substitute(f, "x", S.parse("y", "term")) == f


def test_substitute_rejects_capture():
    f = S.parse("[y := 2]x > y")
    with pytest.raises(AdmissibilityError):
        substitute(f, "x", S.parse("y", "term"))


def test_substitute_rejects_may_bound_rebinding():
    f = S.parse("[x := 1 ++ ?true]x > 0")
    with pytest.raises(AdmissibilityError):
        substitute(f, "x", S.lit(5))


def test_substitute_into_ode_variable_rejected():
    with pytest.raises(AdmissibilityError):
        substitute(S.parse("[{x'=1}]x > 0"), "x", S.lit(2))


@pytest.mark.parametrize("check", props.CHECKS, ids=lambda c: c.__name__)
def test_properties_small_run(check):
    for i in range(150):
        assert check(random.Random(i)) is None


def test_substitution_lemma_small_run():
    admissible = 0
    for i in range(150):
        msg, adm = props.substitution(random.Random(i))
        assert msg is None
        admissible += adm
    assert admissible > 100
