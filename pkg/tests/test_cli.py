import json

import pytest

from cdgl import syntax as S
from cdgl.cli import CONFIG_ENV, main
from cdgl.prover import parse_proofs

MOD, PRF = "corpus/driving.cdgl", "corpus/driving.cdglp"


def test_check_corpus(capsys):
    assert main(["check", MOD, PRF]) == 0
    out = capsys.readouterr().out
    assert "reachAvoid: Checked" in out and "Assumed" in out


def test_check_strict_rejects_assumptions():
    assert main(["check", "--strict", MOD, PRF]) == 1


def test_check_json_report(tmp_path):
    report = tmp_path / "r.json"
    assert main(["check", MOD, PRF, "--json", str(report)]) == 0
    (entry,) = json.loads(report.read_text())
    assert entry["proof"] == "reachAvoid"


def test_missing_file_is_usage_error(tmp_path):
    assert main(["check", str(tmp_path / "nope.cdgl"), PRF]) == 2


def test_parse_error_reports_location(tmp_path, capsys):
    bad = tmp_path / "bad.cdgl"
    bad.write_text("game g = x := ;\n")
    assert main(["check", str(bad), PRF]) == 2
    assert f"{bad}:1:" in capsys.readouterr().err


def test_statics_of_named_game(capsys):
    assert main(["statics", MOD, "--name", "plant"]) == 0
    out = capsys.readouterr().out
    assert "BV  = {t, t', v, v', x, x'}" in out


def test_statics_of_expression(capsys):
    assert main(["statics", "--expr", "x := y; z := *"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out == ["FV  = {y}", "BV  = {x, z}", "MBV = {x, z}"]


def test_extract_lists_decisions(capsys):
    assert main(["extract", MOD, PRF]) == 0
    out = capsys.readouterr().out
    assert out.startswith("strategy: Angel")
    assert "decisions:" in out


def test_play_is_reproducible(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for out in (a, b):
        assert main(["play", MOD, PRF, "--demon", "fixed:T/2", "--init", "x=0,v=0",
                     "--out", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_play_on_wrong_game_fails(capsys):
    assert main(["play", MOD, PRF, "--game", "plant", "--demon", "fixed:T",
                 "--init", "x=0,v=0"]) == 1
    assert "StrategyMismatch" in capsys.readouterr().err


def test_sweep_writes_one_trace_per_seed(tmp_path):
    out = tmp_path / "traces"
    assert main(["sweep", MOD, PRF, "--demon", "fixed:T", "--seeds", "3",
                 "--init", "x=0,v=0", "--out-dir", str(out)]) == 0
    files = sorted(out.iterdir())
    assert [f.name for f in files] == ["trace_0000.json", "trace_0001.json",
                                       "trace_0002.json"]
    for f in files:
        final = json.loads(f.read_text())["final"]
        assert "x" in final


def test_config_file_and_env(tmp_path, monkeypatch):
    cfg = tmp_path / "run.toml"
    cfg.write_text("[run]\nprecision = 40\nrepeat_cap = 1000\n")
    assert main(["--config", str(cfg), "check", MOD, PRF]) == 0
    monkeypatch.setenv(CONFIG_ENV, str(cfg))
    assert main(["check", MOD, PRF]) == 0
    cfg.write_text("[run]\nbogus = 1\n")
    assert main(["check", MOD, PRF]) == 2


def test_fmt_output_reparses(capsys):
    assert main(["fmt", MOD]) == 0
    text = capsys.readouterr().out
    mod = S.parse_module(text)
    assert "plant" in mod.games
    assert main(["fmt", MOD, PRF]) == 0
    proofs_text = capsys.readouterr().out[len(text):]
    (p,) = parse_proofs(proofs_text, mod.env)
    assert p.name == "reachAvoid"
