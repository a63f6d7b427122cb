import json
import logging
import math
import os

import numpy as np
import pandas as pd
import pytest

from src.uq_toolkit.cli import DEFAULTS, build_parser, main, resolve_config, to_json
from src.uq_toolkit.const import ENV_COVERTYPE, EXIT_DOMAIN_ERROR, EXIT_OK, EXIT_USAGE_ERROR
from src.uq_toolkit.datasets import load_iris, to_csv


def _summary(out) -> dict:
    return json.loads((out / "summary.json").read_text(encoding="utf-8"))


@pytest.fixture
def iris_csv(tmp_path):
    path = tmp_path / "iris.csv"
    to_csv(load_iris(), path)
    return path


def test_synth_rerun_from_manifest_is_byte_identical(tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    assert main(["synth", "--kind", "linear", "--seed", "17", "--out", str(first), "--quiet"]) == EXIT_OK
    manifest = json.loads((first / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["command"] == "synth"
    assert manifest["config"]["seed"] == 17
    assert main(["synth", "--config", str(first / "manifest.json"), "--out", str(second), "--quiet"]) == EXIT_OK
    assert (first / "linear.csv").read_bytes() == (second / "linear.csv").read_bytes()


def test_spending_holdout_is_written(tmp_path):
    out = tmp_path / "spending"
    assert main(["synth", "--kind", "spending", "--scenario", "extrapolation", "--out", str(out), "--quiet"]) == EXIT_OK
    assert (out / "spending_extrapolation.csv").exists()
    assert (out / "spending_extrapolation_holdout.csv").exists()


def test_config_precedence(tmp_path):
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps({"trees": 7, "max_depth": 3}), encoding="utf-8")
    args = build_parser().parse_args(["forest-uq", "--config", str(config_path), "--max-depth", "none"])
    config = resolve_config("forest-uq", args)
    assert config["trees"] == 7
    assert config["max_depth"] is None
    assert config["vote"] == DEFAULTS["forest-uq"]["vote"]


def test_unknown_config_key_is_a_usage_error(tmp_path):
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps({"forest_size": 7}), encoding="utf-8")
    out = tmp_path / "out"
    assert main(["forest-uq", "--config", str(config_path), "--out", str(out), "--quiet"]) == EXIT_USAGE_ERROR
    assert not out.exists()


def test_bad_flag_value_is_a_usage_error():
    assert main(["forest-uq", "--vote", "maybe"]) == EXIT_USAGE_ERROR


def test_unused_flag_only_warns(tmp_path, caplog):
    out = tmp_path / "synth"
    with caplog.at_level(logging.WARNING):
        assert main(["synth", "--alpha", "0.3", "--out", str(out)]) == EXIT_OK
    assert "--alpha has no effect on synth" in caplog.text


def test_failed_run_removes_its_output_directory(tmp_path):
    out = tmp_path / "conformal"
    argv = ["conformal", "--task", "regression", "--split", "50", "5", "20", "--alpha", "0.05", "--out", str(out), "--quiet"]
    assert main(argv) == EXIT_DOMAIN_ERROR
    assert not out.exists()


def test_failed_run_keeps_existing_files(tmp_path):
    out = tmp_path / "existing"
    out.mkdir()
    (out / "notes.txt").write_text("keep me", encoding="utf-8")
    argv = ["conformal", "--task", "regression", "--split", "50", "5", "20", "--alpha", "0.05", "--out", str(out), "--quiet"]
    assert main(argv) == EXIT_DOMAIN_ERROR
    assert [p.name for p in out.iterdir()] == ["notes.txt"]


def test_classification_conformal_needs_data(tmp_path, monkeypatch):
    monkeypatch.delenv(ENV_COVERTYPE, raising=False)
    assert main(["conformal", "--out", str(tmp_path / "c"), "--quiet"]) == EXIT_USAGE_ERROR


def test_ols_bands_are_nested(tmp_path):
    out = tmp_path / "ols"
    assert main(["ols", "--scenarios", "base", "extrapolation", "--out", str(out), "--quiet"]) == EXIT_OK
    table = pd.read_csv(out / "intervals_base.csv")
    assert (table["lower_90"] <= table["lower_80"]).all()
    assert (table["upper_80"] <= table["upper_90"]).all()
    assert (out / "band_extrapolation.svg").exists()
    summary = _summary(out)
    extrapolation = summary["extrapolation"]
    assert len(extrapolation["holdout_outside_x"]) == extrapolation["holdout_outside"]
    assert "holdout_outside" not in summary["base"]
    coefficients = pd.read_csv(out / "coefficients_base.csv")
    assert coefficients["term"].tolist() == ["intercept", "income"]


def test_forest_uq_artifacts(tmp_path):
    out = tmp_path / "forest"
    assert main(["forest-uq", "--trees", "15", "--out", str(out), "--quiet"]) == EXIT_OK
    table = pd.read_csv(out / "uncertainty.csv")
    assert len(table) == 120
    assert (table["total"] >= table["aleatoric"] - 1e-9).all()
    assert (table["epistemic"] >= 0).all()
    for name in ("epistemic", "aleatoric", "total"):
        curve = pd.read_csv(out / f"rejection_{name}.csv")
        assert curve["rejected_fraction"].iloc[0] == 0.0
    assert (out / "rejection_curves.svg").exists()
    assert (out / "forest.json").exists()
    summary = _summary(out)
    assert summary["log_base"] == "2"
    assert summary["test_flower"]["prediction"] in ("setosa", "versicolor", "virginica")


def test_forest_uq_is_independent_of_workers(tmp_path):
    serial, parallel = tmp_path / "serial", tmp_path / "parallel"
    assert main(["forest-uq", "--trees", "12", "--out", str(serial), "--quiet"]) == EXIT_OK
    assert main(["forest-uq", "--trees", "12", "--n-jobs", "3", "--out", str(parallel), "--quiet"]) == EXIT_OK
    for name in ("uncertainty.csv", "rejection_total.csv"):
        assert (serial / name).read_bytes() == (parallel / name).read_bytes()


def test_classification_conformal_on_csv(tmp_path, iris_csv):
    out = tmp_path / "conformal"
    argv = ["conformal", "--data", str(iris_csv), "--target", "species", "--split", "60", "40", "50", "--trees", "20"]
    assert main([*argv, "--out", str(out), "--quiet"]) == EXIT_OK
    summary = _summary(out)
    assert summary["k"] == math.ceil(41 * 0.8)
    assert summary["n_test"] == 50
    sizes = pd.read_csv(out / "set_sizes.csv")
    assert sizes["count"].sum() == 50
    assert len(sizes) == 4
    calibration = json.loads((out / "calibration.json").read_text(encoding="utf-8"))
    assert calibration["score_kind"] == "classification"


def test_conformal_manifest_records_data_from_environment(tmp_path, iris_csv, monkeypatch):
    first, second = tmp_path / "first", tmp_path / "second"
    monkeypatch.setenv(ENV_COVERTYPE, str(iris_csv))
    argv = ["conformal", "--target", "species", "--split", "60", "40", "50", "--trees", "10", "--quiet"]
    assert main([*argv, "--out", str(first)]) == EXIT_OK
    manifest = json.loads((first / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["config"]["data"] == str(iris_csv)

    monkeypatch.delenv(ENV_COVERTYPE)
    assert main(["conformal", "--config", str(first / "manifest.json"), "--out", str(second), "--quiet"]) == EXIT_OK
    assert (first / "prediction_sets.csv").read_bytes() == (second / "prediction_sets.csv").read_bytes()
    assert _summary(first) == _summary(second)


def test_regression_conformal(tmp_path):
    out = tmp_path / "conformal"
    argv = ["conformal", "--task", "regression", "--split", "200", "100", "300", "--alpha", "0.1"]
    assert main([*argv, "--out", str(out), "--quiet"]) == EXIT_OK
    summary = _summary(out)
    assert summary["k"] == 91
    assert 0.8 <= summary["coverage"] <= 1.0
    table = pd.read_csv(out / "prediction_intervals.csv")
    widths = table["upper"] - table["lower"]
    assert np.allclose(widths, widths.iloc[0])


def test_bnn_smoke(tmp_path):
    out = tmp_path / "bnn"
    argv = ["bnn", "--hidden", "8", "--epochs", "3", "--mc-passes", "5", "--out", str(out), "--quiet"]
    assert main(argv) == EXIT_OK
    table = pd.read_csv(out / "predictions.csv")
    assert len(table) == 100
    assert np.allclose(table["total_var"], table["epistemic_var"] + table["aleatoric_var"])
    assert len(pd.read_csv(out / "training_log.csv")) == 4
    summary = _summary(out)
    assert summary["epistemic_outside_train_domain"] is not None
    assert (out / "model.json").exists()


@pytest.mark.slow
@pytest.mark.skipif(not os.path.exists(os.environ.get(ENV_COVERTYPE, "")), reason=f"set {ENV_COVERTYPE} to a covertype CSV")
def test_covertype_conformal_coverage(tmp_path):
    out = tmp_path / "covertype"
    assert main(["conformal", "--alpha", "0.2", "--out", str(out), "--quiet"]) == EXIT_OK
    summary = _summary(out)
    assert summary["k"] == 1281
    assert 0.78 <= summary["coverage"] <= 0.83


def test_to_json_drops_non_finite_values():
    assert to_json({"a": np.float64(math.nan), "b": [np.int64(3), math.inf], "c": (1.5,)}) == {"a": None, "b": [3, None], "c": [1.5]}


if __name__ == "__main__":
    pytest.main(["-v", __file__])
