import json

import numpy as np
import pytest

from msstrn.cli import main
from msstrn.data import load_series, synth_generate
from msstrn.trainer import read_predictions

SMALL = {
    "model": {"input_len": 4, "output_len": 2, "window": 2, "embed_dim": 2, "hidden_dim": 4, "heads": 2},
    "train": {"max_epochs": 1, "batch_size": 16, "dtype": "float64"},
    "synth": {"nodes": 3, "length": 80, "seed": 1},
}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def error_of(err):
    lines = err.strip().splitlines()
    assert len(lines) == 1
    return json.loads(lines[0])


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(SMALL))
    return path


@pytest.fixture
def trained(tmp_path, config, capsys):
    code, out, _ = run(capsys, "train", "--config", config, "--data", "synth", "--out", tmp_path / "run")
    assert code == 0
    return tmp_path / "run", json.loads(out)


def test_synth_command(tmp_path, capsys):
    path = tmp_path / "s.csv"
    code, out, _ = run(capsys, "synth", "--nodes", 4, "--length", 30, "--seed", 3, "--out", path)
    assert code == 0 and json.loads(out)["nodes"] == 4
    series = load_series(path)
    np.testing.assert_array_equal(series.values, synth_generate(4, 30, seed=3).values)


def test_train_writes_artifacts(trained):
    out_dir, report = trained
    for name in ("checkpoint.json", "history.json", "report.json"):
        assert (out_dir / name).exists()
    assert report["epochs"] == 1 and report["stop_reason"] == "max-epochs"
    assert set(report["test"]) == {"mae", "rmse", "mape"}


def test_eval_matches_training_report(trained, capsys):
    out_dir, report = trained
    code, out, _ = run(capsys, "eval", "--checkpoint", out_dir / "checkpoint.json", "--data", "synth")
    assert code == 0
    result = json.loads(out)
    assert result["overall"]["mae"] == pytest.approx(report["test"]["mae"], abs=1e-9)
    assert len(result["per_step"]) == 2


def test_predict_exports_rows(trained, tmp_path, capsys):
    out_dir, _ = trained
    dest = tmp_path / "pred.csv"
    code, out, _ = run(capsys, "predict", "--checkpoint", out_dir / "checkpoint.json", "--data", "synth",
                       "--out", dest)
    assert code == 0
    rows = read_predictions(dest)
    assert len(rows) == json.loads(out)["rows"] > 0
    assert {r["horizon_step"] for r in rows} == {1, 2}


def test_train_and_eval_on_csv(tmp_path, config, capsys):
    csv_path = tmp_path / "d.csv"
    run(capsys, "synth", "--nodes", 3, "--length", 80, "--out", csv_path)
    code, _, _ = run(capsys, "train", "--config", config, "--data", csv_path, "--out", tmp_path / "r")
    assert code == 0
    code, out, _ = run(capsys, "eval", "--checkpoint", tmp_path / "r" / "checkpoint.json", "--data", csv_path)
    assert code == 0 and json.loads(out)["samples"] > 0


def test_unknown_config_key_rejected(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"model": {"embed_dims": 3}}))
    code, out, err = run(capsys, "train", "--config", path, "--data", "synth", "--out", tmp_path / "x")
    assert code != 0 and out == ""
    assert "embed_dims" in error_of(err)["message"]
    path.write_text(json.dumps({"optimizer": {}}))
    code, _, err = run(capsys, "train", "--config", path, "--data", "synth", "--out", tmp_path / "x")
    assert code != 0 and error_of(err)["error"] == "ConfigError"


def test_node_count_mismatch(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({**SMALL, "model": {**SMALL["model"], "num_nodes": 5}}))
    code, _, err = run(capsys, "train", "--config", path, "--data", "synth", "--out", tmp_path / "x")
    assert code != 0 and "num_nodes" in error_of(err)["message"]


def test_bad_data_file(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n3\n")
    code, _, err = run(capsys, "train", "--data", bad, "--out", tmp_path / "x")
    assert code != 0
    assert error_of(err) == {"error": "DataError", "message": f"{bad}:3: expected 2 values, got 1"}
    code, _, err = run(capsys, "eval", "--checkpoint", tmp_path / "missing.json", "--data", "synth")
    assert code != 0 and error_of(err)["error"] == "FileNotFoundError"


def test_usage_errors_are_json(capsys):
    code, _, err = run(capsys, "train", "--data", "synth")
    assert code == 2 and error_of(err)["error"] == "CliError"


def test_gradcheck_command(tmp_path, capsys):
    path = tmp_path / "g.json"
    path.write_text(json.dumps({"model": {"num_nodes": 2, "stack": "SS"}}))
    code, out, _ = run(capsys, "gradcheck", "--config", path)
    assert code == 0
    report = json.loads(out)
    assert report["passed"] and report["max_rel_err"] < 1e-4
    assert "ms_gru_cell" in report["per_check"]
