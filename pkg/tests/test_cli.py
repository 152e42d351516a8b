import json
import math

import pytest
from click.testing import CliRunner

from mdqw.cli import ScenarioConfig, main, parse_seeds, run


def invoke(args):
    r = CliRunner().invoke(main, args)
    return r.exit_code, json.loads(r.output) if r.output.strip().startswith("{") else r.output


def test_parse_seeds():
    assert parse_seeds("1..3") == [1, 2, 3]
    assert parse_seeds("4,7") == [4, 7]
    assert parse_seeds(None, 5) == [5]


def test_welded_decide_report():
    code, rep = invoke(["welded", "decide", "--n", "2", "--seed", "7", "--g-bit", "0"])
    assert code == 0
    r = rep["results"][0]
    assert "p0" in r
    assert r["positive_threshold"] == pytest.approx(2.25 / (50 * math.pi**2))
    assert r["negative_threshold"] == pytest.approx(2 / (50 * math.pi**2))


def test_welded_recover():
    code, rep = invoke(["welded", "recover", "--n", "2", "--seeds", "0..1"])
    assert code == 0 and all(r["t"] == r["truth"] for r in rep["results"])


def test_verify_lemmas():
    code, rep = invoke(["verify-lemmas", "--instances", "20"])
    assert code == 0 and rep["results"][0]["violations"] == 0
    assert "effective_spectral_gap_min_slack" in rep["results"][0]


def test_framework_demo():
    code, rep = invoke(["framework", "--n", "2"])
    assert code == 0
    assert rep["results"][0]["positive"]["outcome"] == "positive"


def test_kdist_infeasible(tmp_path):
    cfg = tmp_path / "w.json"
    cfg.write_text(json.dumps({"n": 18, "k": 3, "seed": 0, "params": {"m": [1, 2]}, "planted": True}))
    code, rep = invoke(["kdist", "analyze", "--config", str(cfg)])
    assert code != 0
    assert rep["results"][0]["error"] == "InfeasibleParams"


def test_config_error():
    code, rep = run(ScenarioConfig("welded-decide", n=2))
    assert code == 2 and rep["error"] == "ConfigError"


def test_out_file_and_determinism(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        CliRunner().invoke(main, ["welded", "decide", "--n", "2", "--seed", "1", "--g-bit", "2", "--out", str(p)])
    assert a.read_bytes() == b.read_bytes()


def test_baseline_csv(tmp_path):
    out = tmp_path / "b.csv"
    code, rep = invoke(["welded", "baseline", "--n", "3", "--trials", "20", "--csv", str(out)])
    lines = out.read_text().splitlines()
    assert lines[0] == "n,p0_positive,p0_negative,positive_threshold,negative_threshold,classical_hitting_median"
    assert len(lines) == 3
    assert rep["results"][0]["separation_holds"]
