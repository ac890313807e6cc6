import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from robust_transit.cli import RunConfig, InputError, main

EXAMPLES = Path(__file__).resolve().parents[1] / "examples"


@pytest.fixture
def runner():
    return CliRunner()


def test_check_doubling_all_pass(runner):
    r = runner.invoke(main, ["check", "--map", str(EXAMPLES / "doubling.json"), "--sigma", "1.5", "--lambda", "1.5"])
    assert r.exit_code == 0, r.output
    assert "FAIL" not in r.output


def test_check_rotation_product_fails_H1(runner):
    r = runner.invoke(main, ["check", "--map", str(EXAMPLES / "rotation_product.json")])
    assert r.exit_code == 1
    lines = dict(l.split()[:2] for l in r.output.splitlines())
    assert lines["volume_expanding"] == "PASS" and lines["H1_expanding_off_U0"] == "FAIL"


def test_malformed_map_exit_2(runner):
    r = runner.invoke(main, ["check", "--map", '{"dim": 1'])
    assert r.exit_code == 2
    assert "invalid JSON" in r.output
    r = runner.invoke(main, ["check", "--map", '{"dim": 2, "linear": [[1]]}'])
    assert r.exit_code == 2


def test_lambda_cantor_and_csv(runner, tmp_path):
    csv_path = tmp_path / "occ.csv"
    r = runner.invoke(main, ["lambda", "--map", str(EXAMPLES / "3x.json"), "--u0", str(EXAMPLES / "third.json"),
                             "--depth", "6", "--csv", str(csv_path)])
    assert r.exit_code == 0, r.output
    assert "cells=64 res=729" in r.output
    rows = csv_path.read_text().splitlines()
    assert rows[0] == "i,depth_survived"
    assert sum(1 for row in rows[1:] if row.endswith(",6")) == 64


def test_shadow_report(runner, tmp_path):
    rng = np.random.default_rng(3)
    x = [0.3]
    for _ in range(99):
        x.append((2 * x[-1] + rng.uniform(-1e-4, 1e-4)) % 1)
    orbit = tmp_path / "noisy.json"
    orbit.write_text(json.dumps({"delta": 1e-4, "points": [[v] for v in x]}))
    out = tmp_path / "report.json"
    r = runner.invoke(main, ["shadow", "--map", str(EXAMPLES / "doubling.json"), "--orbit", str(orbit),
                             "--lambda", "2", "--out", str(out)])
    assert r.exit_code == 0, r.output
    rep = json.loads(out.read_text())
    assert rep["certificates"][0]["details"]["eta"] <= 2e-4
    assert str(orbit) in rep["input_hashes"]


def test_transit_and_graph_csv(runner, tmp_path):
    r = runner.invoke(main, ["transit", "--map", str(EXAMPLES / "doubling.json"), "--res", "32",
                             "--point", "0.3", "--eps", "0.0625", "--graph-csv", str(tmp_path / "g.csv")])
    assert r.exit_code == 0, r.output
    assert (tmp_path / "g.csv").exists()


def test_example_build_and_irg(runner, tmp_path):
    built = tmp_path / "example1.json"
    r = runner.invoke(main, ["example", "example1", "--write", str(built), "--claim", "volume"])
    assert r.exit_code == 0, r.output
    csv_path = tmp_path / "irg.csv"
    r = runner.invoke(main, ["irg", "--map", str(built), "--box", "0.1,0.1,0.13125,0.13125", "--csv", str(csv_path)])
    assert r.exit_code == 0, r.output
    assert csv_path.read_text().splitlines()[0] == "box,step,diameter"


def test_example_build_refused(runner):
    r = runner.invoke(main, ["example", "example1", "--param", "bifurcation_amplitude=3.7", "--no-verify"])
    assert r.exit_code == 1
    assert "build refused" in r.output


def test_perturb_is_deterministic(runner, tmp_path, monkeypatch):
    built = tmp_path / "e.json"
    runner.invoke(main, ["example", "example1", "--write", str(built), "--no-verify"])
    outs = []
    for threads in ("1", "2"):
        monkeypatch.setenv("ROBUST_TRANSIT_THREADS", threads)
        out = tmp_path / f"p{threads}.json"
        r = runner.invoke(main, ["perturb", "--map", str(built), "--trials", "1", "--samples", "2", "--horizon", "10",
                                 "--seed", "4", "--csv", str(tmp_path / "t.csv"), "--out", str(out)])
        assert r.exit_code == 0, r.output
        rep = json.loads(out.read_text())
        for c in rep["certificates"]:
            c.pop("elapsed")
        rep.pop("timing")
        rep["config"].pop("out")
        rep["config"].pop("threads")
        outs.append(rep)
    assert outs[0] == outs[1]
    assert "all-pass rows: 1/1" in r.output


def test_run_config_validation():
    RunConfig("m", 729, 3)
    with pytest.raises(InputError):
        RunConfig("m", 100, 3)
    with pytest.raises(InputError):
        RunConfig("m", tolerances={"eta": 0.0})
