import csv
import json
import shutil
import subprocess

import pytest

from ddpc.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from ddpc.data import write_dataset
from ddpc.evaluate import synthetic_dataset


@pytest.fixture(scope="module")
def data_csv(tmp_path_factory):
    p = tmp_path_factory.mktemp("data") / "ops.csv"
    write_dataset(synthetic_dataset(7, seed=2), p)
    return p


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"planner": {"n_scen": 4},
                             "sweep": {"e_g": [0.01, 1.0], "days": 17}}))
    return p


def test_predict_writes_predictions(data_csv, tmp_path, capsys):
    out = tmp_path / "pred"
    assert main(["predict", str(data_csv), "--adaptive", "--out", str(out)]) == EXIT_OK
    with open(out / "predictions.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["t", "step", "y_pred", "y_true", "abs_err"]
    assert {r["step"] for r in rows} == {str(k) for k in range(1, 13)}
    assert (out / "updates.csv").exists()
    assert "MAE over" in capsys.readouterr().out


def test_predict_too_short(tmp_path):
    p = tmp_path / "short.csv"
    write_dataset(synthetic_dataset(1, seed=2), p)
    assert main(["predict", str(p), "--out", str(tmp_path)]) == EXIT_DATA


def test_predict_wrong_mode(data_csv, tmp_path, capsys):
    assert main(["predict", str(data_csv), "--mode", "heating", "--out", str(tmp_path)]) \
        == EXIT_DATA
    assert "no heating data" in capsys.readouterr().err


def test_sweep_writes_grid_and_heatmap(small_cfg, tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", str(small_cfg), "--out", str(out)]) == EXIT_OK
    with open(out / "sweep.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 2
    assert (out / "heatmap_N12_tinit12.csv").exists()


def test_sweep_plateau_assertion_fails_with_exit_1(tmp_path):
    cfg = tmp_path / "wide.json"
    cfg.write_text(json.dumps({"sweep": {"e_g": [1e-3, 1e4], "days": 17}}))
    assert main(["sweep", "--config", str(cfg), "--assert-plateau",
                 "--out", str(tmp_path)]) == EXIT_USAGE


def test_plan_and_simulate_and_report(small_cfg, tmp_path, capsys):
    assert main(["plan", "--ess-only", "--config", str(small_cfg),
                 "--out", str(tmp_path / "plan")]) == EXIT_OK
    with open(tmp_path / "plan" / "plan.csv") as fh:
        assert next(csv.reader(fh))[0] == "gamma_kw"
    run = tmp_path / "run"
    assert main(["simulate", "--config", str(small_cfg), "--days", "1", "--scenario", "B",
                 "--scenario", "C", "--out", str(run)]) == EXIT_OK
    assert main(["report", str(run)]) == EXIT_OK
    report = (run / "report.md").read_text()
    assert "| B |" in report and "| C |" in report and "Savings" in report
    with open(run / "cost_stack.csv") as fh:
        assert len(list(csv.reader(fh))) == 3


@pytest.mark.parametrize("argv, code", [
    ([], EXIT_USAGE),
    (["frobnicate"], EXIT_USAGE),
    (["simulate", "--scenario", "Z"], EXIT_USAGE),
    (["predict", "/nonexistent/data.csv"], EXIT_DATA),
    (["report", "/nonexistent/run"], EXIT_DATA),
    (["plan", "--config", "/nonexistent/cfg.json"], EXIT_DATA),
])
def test_exit_codes(argv, code, capsys):
    try:
        rc = main(argv)
    except SystemExit as exc:
        rc = exc.code
    assert rc == code


def test_bad_config_exits_2(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"planner": {"nope": 1}}))
    assert main(["plan", "--config", str(p)]) == EXIT_DATA
    assert "planner.nope" in capsys.readouterr().err


@pytest.mark.skipif(shutil.which("ddpc") is None, reason="console script not installed")
def test_console_script_usage_error():
    r = subprocess.run(["ddpc", "predict"], capture_output=True, text=True)
    assert r.returncode == EXIT_USAGE and "usage" in r.stderr
