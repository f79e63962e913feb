import json
import random
from fractions import Fraction

import pytest

from cdgl import syntax as S
from cdgl.creal import State
from cdgl.engine import (DemonScript, ExtractionUnsupported, IdleStrategy,
                         NonTermination, PreconditionFailed, Role, ScriptExhausted,
                         SolutionRejected, StrategyMismatch, extract, play,
                         script_angel, script_demon)
from cdgl.prover import check, parse_proofs
from cdgl.statics import bound_vars

import props
from randgen import rand_game

ANGEL, DEMON = IdleStrategy(Role.ANGEL), IdleStrategy(Role.DEMON)


def game(text):
    return S.parse(text, "game")


def checked(goal, tree):
    (p,) = parse_proofs(f'(proof p :goal "{goal}" {tree})')
    res = check(p.ctx, p.proof, p.goal)
    assert res.ok, res.verdict
    return res


def final(trace):
    return {x: iv.lo for x, iv in trace.final_snapshot().items() if iv.lo == iv.hi}


def test_assignment():
    assert final(play(game("x := 2"), ANGEL, DEMON, State({"x": 0})))["x"] == 2


def test_dual_routes_choice_to_demon():
    ds = script_demon(DemonScript([{"on": "branch", "kind": "fixed", "value": "right"}]))
    tr = play(game("{x := 1 ++ x := 2}^d"), ANGEL, ds, State({"x": 0}))
    assert final(tr)["x"] == 2
    assert tr.events[0]["decider"] == "Demon"


def test_script_outside_dual_is_mismatch():
    ds = script_demon(DemonScript([{"on": "branch", "kind": "fixed", "value": "left"}]))
    with pytest.raises(StrategyMismatch):
        play(game("x := 1 ++ x := 2"), ds, DEMON, State())


def test_missing_rule_is_mismatch():
    ds = script_demon(DemonScript([{"on": "duration", "kind": "fixed", "value": "1"}]))
    with pytest.raises(StrategyMismatch):
        play(game("{x := *}^d"), ANGEL, ds, State())


def test_witness_strategy():
    res = checked("<x:=*>x>=0", '(<:*>I :witness "0" (:=I (arith)))')
    strat = extract(res, "p")
    tr = play(strat.game, strat, DEMON, State({"x": 5}))
    assert final(tr)["x"] == 0
    assert tr.evidence["Angel"]["holds"] is True


def test_box_test_strategy_waits_for_evidence():
    res = checked("[?x>0]x>=0", "([?]I (arith))")
    strat = extract(res, "p")
    assert strat.role is Role.DEMON
    ok = play(strat.game, ANGEL, strat, State({"x": 1}))
    assert ok.forfeit is None and ok.evidence["Demon"]["holds"] is True
    bad = play(strat.game, ANGEL, strat, State({"x": -1}))
    assert bad.forfeit == {"player": "Angel", "construct": "?x>0"}


def test_disjunction_commits_before_play():
    res = checked("<x:=1 ++ x:=2>x>1", "(<u>I2 (:=I (arith)))")
    strat = extract(res, "p")
    assert strat.committed_branch() == 1
    tr = play(strat.game, strat, DEMON, State())
    assert tr.events[0]["choice"] == "right"


@pytest.mark.parametrize("seed", range(25))
def test_dual_involution(seed):
    rng = random.Random(seed)
    g = rand_game(rng, 3)
    sa, sd = props._script(rng), props._script(rng)
    s = props.rand_state(rng)
    assert props.run(S.Dual(S.Dual(g)), s, sa, sd) == props.run(g, s, sa, sd)


def test_repeat_cap():
    angel = script_angel(DemonScript([{"on": "repeat", "kind": "fixed", "value": "100"}]))
    with pytest.raises(NonTermination):
        play(game("{x := x + 1}*"), angel, DEMON, State(), repeat_cap=10)


def test_table_runs_out():
    ds = script_demon(DemonScript([{"on": "value", "kind": "table", "values": ["1"]}]))
    with pytest.raises(ScriptExhausted):
        play(game("{x := *}^d; {y := *}^d"), ANGEL, ds, State())


def test_negative_duration_rejected():
    angel = script_angel(DemonScript([{"on": "duration", "kind": "fixed", "value": "-1"}]))
    with pytest.raises(SolutionRejected):
        play(game("{x' = 1}"), angel, DEMON, State())


def test_failed_proof_cannot_be_extracted():
    (p,) = parse_proofs('(proof p :goal "x >= x + 1" (arith))')
    with pytest.raises(ExtractionUnsupported):
        extract(check(p.ctx, p.proof, p.goal), "p")


def test_script_json_round_trip():
    data = {"decisions": [{"on": "duration", "kind": "uniform", "lo": "1/2", "hi": "1"}],
            "seed": 7}
    script = DemonScript.from_json(data)
    assert script.to_json() == data
    with pytest.raises(ValueError):
        DemonScript.from_json({"decisions": [{"on": "weather", "kind": "fixed"}]})


# ------------------------------------------------------------ corpus plays

@pytest.fixture(scope="module")
def angel(driving_checked):
    return extract(driving_checked, "reachAvoid")


def corpus_play(angel, env, spec, seed=0, extra=None):
    demon = script_demon(DemonScript.parse_spec(spec, seed), env)
    return play(angel.game, angel, demon, State({"x": 0, "v": 0, **(extra or {})}))


def test_full_duration_demon_reaches_goal(angel, driving_module):
    tr = corpus_play(angel, driving_module.env, "fixed:T")
    snap = tr.final_snapshot()
    assert abs(snap["x"].mid - 10) <= Fraction(1, 10 ** 9)
    assert abs(snap["v"].mid) <= Fraction(1, 10 ** 9)
    assert tr.evidence["Angel"]["holds"] is True


def test_half_duration_demon_evolves_minimum(angel, driving_module):
    tr = corpus_play(angel, driving_module.env, "fixed:T/2")
    durations = [Fraction(e["choice"]) for e in tr.events
                 if "samples" in e and isinstance(e["choice"], str)]
    assert durations and all(d == Fraction(1, 2) for d in durations)


def test_seeded_plays_are_byte_identical(angel, driving_module):
    a = corpus_play(angel, driving_module.env, "uniform:T/2,T", seed=4).dumps()
    b = corpus_play(angel, driving_module.env, "uniform:T/2,T", seed=4).dumps()
    assert a == b
    js = json.loads(a)
    assert set(js) >= {"events", "final", "evidence"}
    assert set(js["events"][0]) >= {"step", "construct", "decider", "choice", "state"}


def test_runtime_bound_effect(angel, driving_module):
    tr = corpus_play(angel, driving_module.env, "fixed:T", extra={"q": 3})
    assert "q" not in bound_vars(angel.game)
    assert tr.final_snapshot()["q"].lo == 3


def test_precondition_checked(angel, driving_module):
    demon = script_demon(DemonScript.parse_spec("fixed:T"), driving_module.env)
    with pytest.raises(PreconditionFailed):
        play(angel.game, angel, demon, State({"x": 1, "v": 0}))


def test_wrong_game_is_mismatch(angel, driving_module):
    demon = script_demon(DemonScript.parse_spec("fixed:T"), driving_module.env)
    with pytest.raises(StrategyMismatch):
        play(driving_module.games["plant"], angel, demon, State())
