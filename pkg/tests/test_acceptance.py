"""Acceptance criteria 1-7.  Each test records a PASS/FAIL line that the
terminal summary prints; run ``pytest tests/test_acceptance.py -v``."""

from __future__ import annotations

import math
import random
import time
from fractions import Fraction

import pytest

from cdgl import syntax as S
from cdgl.creal import State, eval_term
from cdgl.engine import DemonScript, extract, play, script_demon
from cdgl.ode import ODESystem, picard_solve, solve_nilpotent
from cdgl.prover import RULES, Policy, Verdict, check, parse_proofs

import props
from conftest import record
from randgen import fuzz_diamond_case

G = Fraction(10)
K = 53
# names of the arithmetic lemmas the driving proof leaves to the reader
LEMMAS = {"Acceleration in Bounds", "arith1", "arith2", "Safe Upper Bound"}


# ------------------------------------------------------------------ 1

def test_c1_corpus_proof_checks(driving_proof):
    p = driving_proof
    t0 = time.perf_counter()
    res = check(p.ctx, p.proof, p.goal, Policy.INTERVAL_THEN_ASSUME)
    elapsed = time.perf_counter() - t0
    assumed = res.assumed
    unnamed = [o.path for o in assumed if o.lemma not in LEMMAS]
    refuted = [o.path for o in res.obligations if o.verdict is Verdict.REFUTED]
    ok = (res.ok and len(assumed) <= 5 and not unnamed and not refuted
          and elapsed <= 30)
    record(1, ok, f"verdict={'Checked' if res.ok else res.verdict} "
                  f"proved={len(res.obligations) - len(assumed)} assumed={len(assumed)} "
                  f"lemmas={sorted(o.lemma for o in assumed)} time={elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------------ 2

@pytest.fixture(scope="module")
def corpus_plays(driving_module, driving_checked):
    """Extracted Angel against 20 seeded uniform [T/2, T] timing scripts."""
    assert driving_checked.ok
    angel = extract(driving_checked, "reachAvoid")
    env = driving_module.env
    t0 = time.perf_counter()
    traces = []
    for seed in range(20):
        demon = script_demon(DemonScript.parse_spec("uniform:T/2,T", seed), env)
        traces.append(play(angel.game, angel, demon, State({"x": 0, "v": 0}), K))
    return traces, time.perf_counter() - t0


def _num(j) -> Fraction:
    """Midpoint of a trace value: a rational string or an interval."""
    if isinstance(j, dict):
        return (Fraction(j["lo"]) + Fraction(j["hi"])) / 2
    return Fraction(j)


def _newton_replay(trace) -> Fraction:
    """Re-simulate x and v from the recorded accelerations and durations
    with v(t) = v0 + a t, x(t) = x0 + v0 t + a t^2 / 2; returns the largest
    deviation from the engine's recorded states."""
    x = v = a = Fraction(0)
    worst = Fraction(0)
    for ev in trace.events:
        if ev["construct"] == "a := *":
            a = _num(ev["choice"])
        elif "samples" in ev:
            d = _num(ev["choice"])
            x, v = x + v * d + a * d * d / 2, v + a * d
            worst = max(worst, abs(x - _num(ev["state"]["x"])),
                        abs(v - _num(ev["state"]["v"])))
    return worst


def _max_x(trace) -> Fraction:
    hi = Fraction(-10 ** 9)
    for ev in trace.events:
        for st in [ev["state"], *ev.get("samples", [])]:
            if "x" in st:
                hi = max(hi, Fraction(st["x"]["hi"]))
    return hi


def test_c2_reach_avoid_plays(corpus_plays):
    traces, elapsed = corpus_plays
    eps = Fraction(1, 10 ** 6)
    slack = Fraction(1, 2 ** K)
    bad = []
    worst_replay = Fraction(0)
    for seed, tr in enumerate(traces):
        snap = tr.final_snapshot()
        x, v = snap["x"], snap["v"]
        if not (abs(x.lo - G) <= eps and abs(x.hi - G) <= eps):
            bad.append(f"seed {seed}: x={float(x.mid)}")
        if not (abs(v.lo) <= eps and abs(v.hi) <= eps):
            bad.append(f"seed {seed}: v={float(v.mid)}")
        if _max_x(tr) > G + slack:
            bad.append(f"seed {seed}: x exceeds g in the trace")
        worst_replay = max(worst_replay, _newton_replay(tr))
    if worst_replay > Fraction(1, 10 ** 9):
        bad.append(f"Newton replay deviates by {float(worst_replay):.3g}")
    ok = not bad and elapsed <= 60
    forfeits = sum(1 for t in traces if t.forfeit)
    record(2, ok, f"plays=20 violations={len(bad)} demon_forfeits={forfeits} "
                  f"newton_dev={float(worst_replay):.2g} time={elapsed:.1f}s")
    assert ok, bad


# ------------------------------------------------------------------ 3

def _rand_nilpotent(rng: random.Random) -> ODESystem:
    """Strictly triangular polynomial field of degree <= 2."""
    xs = ["x", "y", "z"][: rng.randint(1, 3)]
    eqs = []
    for i, x in enumerate(xs):
        later = xs[i + 1:]
        rhs = S.lit(Fraction(rng.randint(-3, 3), rng.randint(1, 3)))
        for _ in range(rng.randint(0, 2)):
            if not later:
                break
            mono = S.Var(rng.choice(later))
            if rng.random() < 0.5:
                mono = S.Times(mono, S.Var(rng.choice(later)))
            coef = S.lit(Fraction(rng.randint(-2, 2), rng.randint(1, 2)))
            rhs = S.Plus(rhs, S.Times(coef, mono))
        eqs.append((x, rhs))
    return ODESystem(tuple(eqs))


def _e_bounds(n: int = 30):
    lo = sum(Fraction(1, math.factorial(i)) for i in range(n + 1))
    return lo, lo + Fraction(2, math.factorial(n + 1))


def test_c3_picard_matches_closed_form():
    t0 = time.perf_counter()
    rng = random.Random(3)
    tol = Fraction(1, 2 ** 20)
    worst = Fraction(0)
    for _ in range(10):
        sys = _rand_nilpotent(rng)
        s0 = State({x: Fraction(rng.randint(-4, 4), 2) for x in sys.vars})
        closed = solve_nilpotent(sys)
        numeric = picard_solve(sys, s0, 1, k=20)
        for i in range(129):
            t = Fraction(i, 128)
            got = numeric.sample(t)
            for x, term in closed.terms(S.lit(t)).items():
                point = eval_term(term, s0)
                assert point.lo == point.hi
                exact = point.lo
                iv = got[x]
                worst = max(worst, abs(iv.lo - exact), abs(iv.hi - exact))
    exp = picard_solve(ODESystem((("x", S.Var("x")),)), State({"x": 1}), 1, k=20)
    e_iv = exp.sample(1)["x"]
    e_lo, e_hi = _e_bounds()
    contains_e = e_iv.lo <= e_lo and e_hi <= e_iv.hi
    elapsed = time.perf_counter() - t0
    ok = worst <= tol and contains_e and e_iv.width <= tol and elapsed <= 60
    record(3, ok, f"max_dev=2^{math.log2(worst) if worst else -math.inf:.1f} "
                  f"e_width=2^{math.log2(e_iv.width):.1f} contains_e={contains_e} "
                  f"time={elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------------ 4

def test_c4_static_semantics_properties():
    t0 = time.perf_counter()
    failures = []
    admissible = 0
    for i in range(1000):
        rng = random.Random(10_000 + i)
        for chk in props.CHECKS:
            msg = chk(rng)
            if msg:
                failures.append(f"{chk.__name__}: {msg}")
        msg, adm = props.substitution(rng)
        admissible += adm
        if msg:
            failures.append(f"substitution: {msg}")
    elapsed = time.perf_counter() - t0
    ok = not failures and admissible >= 500 and elapsed <= 120
    record(4, ok, f"cases=1000 failures={len(failures)} "
                  f"admissible_substitutions={admissible} time={elapsed:.1f}s")
    assert ok, failures[:5]


# ------------------------------------------------------------------ 5

def _both_hold(tr) -> bool:
    return all(e["holds"] is True for who, e in tr.evidence.items()
               if not (tr.forfeit and tr.forfeit["player"] == who))


def test_c5_consistency_shadow(corpus_plays, driving_module, driving_checked):
    traces, _ = corpus_plays
    angel = extract(driving_checked, "reachAvoid")
    demon = script_demon(DemonScript.parse_spec("fixed:T/2"), driving_module.env)
    traces = traces + [play(angel.game, angel, demon, State({"x": 0, "v": 0}), K)]
    violations = [i for i, tr in enumerate(traces) if not _both_hold(tr)]

    fuzz_bad, redrawn, n, seed = [], 0, 0, 0
    while n < 200:
        case = fuzz_diamond_case(random.Random(seed))
        seed += 1
        res = check(case.ctx, case.proof, case.goal, Policy.STRICT)
        if not res.ok:
            # reading x after a choice that may rebind it is inadmissible
            assert "AdmissibilityError" in res.verdict.reason, res.verdict
            redrawn += 1
            continue
        n += 1
        strat = extract(res, f"fuzz{seed}")
        ds = script_demon(DemonScript([
            {"on": "branch", "kind": "uniform"},
            {"on": "value", "kind": "uniform", "lo": "-1", "hi": "1"}], seed))
        tr = play(strat.game, strat, ds, case.init, K)
        if not _both_hold(tr):
            fuzz_bad.append(seed)
        # a Demon aiming for the negation never wins against a checked Angel
        neg = play(strat.game, strat, ds, case.init, K,
                   demon_post=S.c_not(case.post))
        if neg.forfeit is None and neg.evidence["Demon"]["holds"] is not False:
            fuzz_bad.append(seed)
    ok = not violations and not fuzz_bad
    record(5, ok, f"corpus_plays={len(traces)} fuzz_plays=200 "
                  f"violations={len(violations) + len(fuzz_bad)} "
                  f"redrawn_inadmissible={redrawn}")
    assert ok, (violations, fuzz_bad)


# ------------------------------------------------------------------ 6

EXPECTED_RULES = {
    # propositional
    "[u]I", "[u]E1", "[u]E2", "<u>I1", "<u>I2", "<u>E",
    "<?>I", "<?>E1", "<?>E2", "[?]I", "[?]E",
    # first-order
    "[:*]I", "<:*>I", "[:*]E", "<:*>E", ";I", ":=I", "^dI",
    # loops
    "<*>E", "[*]E", "<*>S", "[*]R", "<*>G", "loop", "FP", "<*>I",
    # differential equations
    "DI", "DC", "DW", "DG", "DV", "bsolve", "dsolve",
    # derived and structural
    "GV", "hyp", "M",
    # arithmetic leaf routed to the oracle
    "arith",
}


def _mutants(rng: random.Random):
    """(base proof text, mutated proof text, expected reason fragment)."""
    b, o = rng.sample(["x", "y", "z", "w"], 2)
    c = rng.randint(1, 5)
    fam = rng.randrange(6)
    if fam == 0:
        t = f'(proof p :goal "[{b}:=*]{b}*{b}>=0" :ctx "{o}={c}" ([:*]I :fresh "{{F}}" (arith)))'
        return t.replace("{F}", "q"), t.replace("{F}", rng.choice([b, o])), "not fresh"
    if fam == 1:
        t = (f'(proof p :goal "<{b}:={b}+{c}>{b}>{c - 1}" :ctx "{b}=0" :ctx "{o}={c}" '
             f'(:=I :fresh "{{F}}" (arith)))')
        return t.replace("{F}", "q"), t.replace("{F}", rng.choice([b, o])), "not fresh"
    if fam == 2:
        t = (f'(proof p :goal "<{b}:=*>[{o}:={o}+1]{b}<{o}" :ctx "{o}={c}" '
             f'(<:*>I :witness "{{W}}" (:=I (:=I (arith)))))')
        bad = rng.choice([o, f"{o}-1", f"2*{o}", f"{o}*{o}"])
        return t.replace("{W}", str(c)), t.replace("{W}", bad), "AdmissibilityError"
    if fam == 3:
        t = (f'(proof p :goal "{{G}}>=0" :ctx "<{b}:=*>{b}*{b}>=0" '
             f'(<:*>E :on "<{b}:=*>{b}*{b}>=0" (hyp :index 0) ([:*]I ([?]I (arith)))))')
        return (t.replace("{G}", f"{o}*{o}"), t.replace("{G}", f"{b}*{b}+{o}*{o}"),
                "free in the conclusion")
    if fam == 4:
        t = (f'(proof p :goal "<{{{b}:={b}-1}}*>{b}<=0" :ctx "{b}={c}" :ctx "{o}=0" '
             f'(<*>I :inv "{b}>=0" :metric "{b}" :zero "0" :delta "1" :ghost "{{F}}" '
             f'(arith) (:=I (arith)) (arith)))')
        return t.replace("{F}", "M"), t.replace("{F}", rng.choice([b, o])), "not fresh"
    t = (f'(proof p :goal "[{{{b}\'=1}}]{b}>={c}" :ctx "{b}={c}" :ctx "{o}=0" '
         f'(bsolve :time "{{T}}" :sample "{{R}}" ([:*]I ([?]I ([?]I (arith))))))')
    base = t.replace("{T}", "s").replace("{R}", "r")
    if rng.random() < 0.5:
        bad = t.replace("{T}", rng.choice([b, o])).replace("{R}", "r")
    else:
        bad = t.replace("{T}", "s").replace("{R}", rng.choice([b, o]))
    return base, bad, "not fresh"


def _verdict(text: str):
    (p,) = parse_proofs(text)
    return check(p.ctx, p.proof, p.goal)


def test_c6_rule_table_audit():
    table = set(RULES)
    table_ok = table == EXPECTED_RULES
    rng = random.Random(6)
    accepted, wrong_reason, bad_base = [], [], []
    for _ in range(50):
        base, mutant, reason = _mutants(rng)
        if not _verdict(base).ok:
            bad_base.append(base)
        res = _verdict(mutant)
        if res.ok:
            accepted.append(mutant)
        elif reason not in res.verdict.reason:
            wrong_reason.append((mutant, res.verdict.reason))
    ok = table_ok and not accepted and not wrong_reason and not bad_base
    record(6, ok, f"rules={len(table)} table_matches={table_ok} mutants=50 "
                  f"false_accepts={len(accepted)} wrong_reason={len(wrong_reason)}")
    assert table_ok, table ^ EXPECTED_RULES
    assert not bad_base, bad_base[:2]
    assert not accepted and not wrong_reason, (accepted[:2], wrong_reason[:2])


# ------------------------------------------------------------------ 7

def _rat_term(q: Fraction, rng: random.Random):
    """A term denoting q, written in one of several syntactic forms."""
    form = rng.randrange(3)
    m = rng.randint(2, 5)
    if form == 0:
        return S.lit(q)
    if form == 1:
        return S.Div(S.lit(q.numerator * m), S.lit(q.denominator * m))
    half = q / 2
    return S.Plus(S.lit(half), S.Div(S.lit(half.numerator * m), S.lit(half.denominator * m)))


def test_c7_min_max_exact():
    rng = random.Random(7)
    wrong = []
    equal_pairs = 0
    for i in range(100):
        p = Fraction(rng.randint(-50, 50), rng.randint(1, 12))
        if i < 20:
            q = p
            f, g = S.lit(p), S.Div(S.lit(p.numerator * 2), S.lit(p.denominator * 2))
            assert f != g
            equal_pairs += 1
        else:
            q = Fraction(rng.randint(-50, 50), rng.randint(1, 12))
            f, g = _rat_term(p, rng), _rat_term(q, rng)
        for op, want in ((S.Min, min(p, q)), (S.Max, max(p, q))):
            iv = eval_term(op(f, g), State())
            if not (iv.lo == iv.hi == want):
                wrong.append((S.pretty(op(f, g)), iv, want))
    ok = not wrong
    record(7, ok, f"pairs=100 equal_valued={equal_pairs} mismatches={len(wrong)}")
    assert ok, wrong[:3]
