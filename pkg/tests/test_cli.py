import json
import subprocess
import sys

import numpy as np

from passfl import cli


def run(*args):
    return cli.main([str(a) for a in args])


def test_optimize_writes_outputs(tmp_path):
    assert run("optimize", "--out", tmp_path) == 0
    data = json.loads((tmp_path / "round.json").read_text())
    assert data["lambda"] == 0.5 and len(data["mask"]) == 12
    header, rows = cli.read_csv(tmp_path / "positions.csv")
    assert header == ["slot_or_shared", "antenna_index", "x_m"]
    assert len(rows) == 4 * sum(data["mask"])
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["status"] == "ok" and man["exit_code"] == 0
    assert set(man["outputs"]) == {"round.json", "positions.csv"}


def test_lambda_out_of_range(tmp_path, capsys):
    assert run("optimize", "--lambda", 1.5, "--out", tmp_path) == cli.EXIT_CONFIG
    assert "lambda out of (0,1)" in capsys.readouterr().err
    assert json.loads((tmp_path / "manifest.json").read_text())["status"] == "config_error"


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"num_pas": 4, "antena_count": 3}))
    assert run("optimize", cfg, "--out", tmp_path / "o") == cli.EXIT_CONFIG
    assert "antena_count" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert run("optimize", tmp_path / "nope.json", "--out", tmp_path) == cli.EXIT_CONFIG


def test_pareto(tmp_path):
    assert run("pareto", "--out", tmp_path) == 0
    header, rows = cli.read_csv(tmp_path / "pareto.csv")
    assert header == ["lambda", "tau_t_s", "f_learn_samples", "dominated"]
    assert len(rows) <= 21
    kept = sorted((float(r[1]), float(r[2])) for r in rows if r[3] == "0")
    for (t0, f0), (t1, f1) in zip(kept, kept[1:]):
        assert t1 > t0 and f1 < f0


def test_pareto_explicit_and_empty_grid(tmp_path):
    assert run("pareto", "--lambda-grid", "0.5,0.9999", "--out", tmp_path) == 0
    assert len(cli.read_csv(tmp_path / "pareto.csv")[1]) == 2
    assert run("pareto", "--lambda-grid", "", "--out", tmp_path) == cli.EXIT_CONFIG
    assert run("pareto", "--lambda-grid", "0.2,2", "--out", tmp_path) == cli.EXIT_CONFIG


def test_train_outputs_round_trip(tmp_path):
    assert run("train", "--rounds", 4, "--pipeline", "perfect", "--out", tmp_path) == 0
    header, rows = cli.read_csv(tmp_path / "train.csv")
    assert header == ["round", "loss", "gap", "metric", "tau_t_s", "cum_latency_s", "scheduled_count"]
    assert [r[-1] for r in rows] == ["12"] * 4
    bh, brows = cli.read_csv(tmp_path / "bound.csv")
    assert bh == ["round", "A_t", "envelope"]
    gap = np.array([float(r[2]) for r in rows])
    env = np.array([float(r[2]) for r in brows])
    assert np.all(gap <= env)
    # 17 significant digits reproduce the binary value exactly
    for r in rows:
        for v in r[1:6]:
            assert cli.FLOAT_FMT % float(v) == v


def test_train_zero_rounds_and_bad_pipeline(tmp_path):
    assert run("train", "--rounds", 0, "--out", tmp_path) == 0
    assert cli.read_csv(tmp_path / "train.csv")[1] == []
    assert run("train", "--pipeline", "magic", "--out", tmp_path) == cli.EXIT_CONFIG


def test_gen_scenario_feeds_optimize(tmp_path):
    assert run("gen-scenario", "--seed", 5, "--out", tmp_path) == 0
    assert run("optimize", tmp_path / "scenario.json", "--out", tmp_path / "o") == 0


def test_infeasible_and_internal_exit_codes(tmp_path, monkeypatch):
    from passfl import driver, solvers

    def boom(*a, **k):
        raise solvers.InfeasibleRateError("no")
    monkeypatch.setattr(driver, "optimize_round", boom)
    assert run("optimize", "--out", tmp_path) == cli.EXIT_INFEASIBLE

    def bug(*a, **k):
        raise driver.InternalAssertionError("bad")
    monkeypatch.setattr(driver, "optimize_round", bug)
    assert run("optimize", "--out", tmp_path) == cli.EXIT_INTERNAL
    assert json.loads((tmp_path / "manifest.json").read_text())["exit_code"] == cli.EXIT_INTERNAL


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "passfl.cli", "optimize", "--lambda", "2",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 2 and "lambda out of (0,1)" in proc.stderr
