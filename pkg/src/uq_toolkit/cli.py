from __future__ import annotations

import argparse
import copy
import dataclasses
import json
import logging
import math
import os
import shutil
import sys
from collections.abc import Callable, Sequence
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from . import plotting
from ._version import __version__
from .bnn import MlpConfig, mc_predict_batch, save_mlp, train, write_training_log
from .conformal import (
    ScoreKind,
    calibrate,
    classification_scores,
    empirical_coverage,
    mean_set_size,
    predict_intervals_conformal,
    predict_sets,
    regression_scores,
    save_calibration,
    set_size_histogram,
)
from .const import (
    COVERTYPE_TARGET,
    CSV_FLOAT_FORMAT,
    DEFAULT_ALPHA,
    DEFAULT_HIDDEN,
    DEFAULT_MAX_DEPTH,
    DEFAULT_MC_PASSES,
    DEFAULT_SEED,
    DEFAULT_TREES,
    ENV_COVERTYPE,
    EXIT_DOMAIN_ERROR,
    EXIT_IO_ERROR,
    EXIT_OK,
    EXIT_USAGE_ERROR,
    IRIS_TARGET,
    IRIS_TEST_FLOWER,
    MANIFEST_FILE,
    SUMMARY_FILE,
)
from .datasets import (
    SPENDING_SCENARIOS,
    Dataset,
    LinearConfig,
    SineConfig,
    SplitSpec,
    TargetKind,
    fetch_covertype,
    load_csv,
    load_iris,
    spending_scenario,
    split,
    subsample,
    synth_linear,
    synth_sine,
    to_csv,
)
from .exceptions import InvalidConfig, UncertaintyError
from .forest import (
    ForestConfig,
    forest_predict,
    forest_predict_batch,
    forest_predict_proba,
    forest_predict_proba_batch,
    save_forest,
    train_forest,
)
from .infotheory import decompose, decompose_batch
from .linreg import fit_ols, predict, predict_intervals, residual_summary
from .selective import curve_to_frame, curves_for_decomposition, rejection_curve, threshold_for_target

_LOGGER = logging.getLogger(__name__)

Config = dict[str, Any]


@dataclasses.dataclass
class RunContext:
    """
    Output directory of one subcommand run.

    Tracks what was written so a failed run can remove its artifacts.
    """

    out: Path
    created: bool
    written: list[Path] = dataclasses.field(default_factory=list)

    @classmethod
    def open(cls, out: str | Path) -> RunContext:
        out = Path(out)
        created = not out.exists()
        out.mkdir(parents=True, exist_ok=True)
        return cls(out=out, created=created)

    def path(self, name: str) -> Path:
        target = self.out / name
        self.written.append(target)
        return target

    def write_frame(self, name: str, frame: pd.DataFrame) -> Path:
        target = self.path(name)
        frame.to_csv(target, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
        return target

    def write_json(self, name: str, data: Any) -> Path:
        target = self.path(name)
        target.write_text(json.dumps(to_json(data), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return target

    def discard(self) -> None:
        if self.created:
            shutil.rmtree(self.out, ignore_errors=True)
            return
        for target in self.written:
            target.unlink(missing_ok=True)


def to_json(value: Any) -> Any:
    """JSON-native copy of ``value``; non-finite floats become null."""
    if isinstance(value, dict):
        return {str(k): to_json(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_json(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_json(value.tolist())
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    if dataclasses.is_dataclass(value):
        return to_json(dataclasses.asdict(value))
    return value


def _level_label(alpha: float) -> str:
    return f"{(1.0 - alpha) * 100:g}"


def _threshold_summary(curve, target: float):
    choice = threshold_for_target(curve, target)
    return None if choice is None else dataclasses.asdict(choice)


def _write_curves(run: RunContext, prefix: str, curves, target: float) -> dict[str, Any]:
    for name, curve in curves.items():
        run.write_frame(f"{prefix}_{name}.csv", curve_to_frame(curve))
    plotting.plot_rejection_curves(curves, run.path(f"{prefix}_curves.svg"), target=target)
    return {name: _threshold_summary(curve, target) for name, curve in curves.items()}


def _load_classification(config: Config, default: Callable[[], Dataset] | None = None) -> Dataset:
    if config.get("data"):
        return load_csv(config["data"], config["target"], TargetKind.CLASSIFICATION)
    if default is None:
        raise InvalidConfig("a classification dataset is required: pass --data")
    return default()


# -- ols ---------------------------------------------------------------------


def cmd_ols(config: Config, run: RunContext) -> dict[str, Any]:
    """Fit OLS per scenario; write coefficients, interval tables and band figures."""
    alphas = sorted({float(config["alpha"]), *map(float, config["extra_alphas"])})
    if config.get("data"):
        datasets = {"data": (load_csv(config["data"], config["target"], TargetKind.REGRESSION), None)}
    else:
        unknown = set(config["scenarios"]) - set(SPENDING_SCENARIOS)
        if unknown:
            raise InvalidConfig(f"unknown scenarios {sorted(unknown)}; choose from {SPENDING_SCENARIOS}")
        datasets = {name: spending_scenario(name, config["seed"]) for name in config["scenarios"]}

    summary: dict[str, Any] = {}
    for name, (train_ds, holdout) in datasets.items():
        fit = fit_ols(train_ds.features, train_ds.targets)
        terms = ["intercept", *train_ds.feature_names]
        run.write_frame(f"coefficients_{name}.csv", pd.DataFrame({"term": terms, "estimate": fit.coefficients}))

        if train_ds.k == 1:
            lo, hi = float(train_ds.features.min()), float(train_ds.features.max())
            if holdout is not None:
                hi = max(hi, float(holdout.features.max()))
            grid = np.linspace(lo, hi, int(config["grid_points"]))[:, None]
        else:
            grid = train_ds.features
        table = pd.DataFrame(grid, columns=list(train_ds.feature_names))
        bands = {alpha: predict_intervals(fit, grid, alpha) for alpha in alphas}
        table["point"] = bands[alphas[0]].points
        for alpha, band in bands.items():
            table[f"lower_{_level_label(alpha)}"] = band.lower
            table[f"upper_{_level_label(alpha)}"] = band.upper
        run.write_frame(f"intervals_{name}.csv", table)

        primary = float(config["alpha"])
        train_band = predict_intervals(fit, train_ds.features, primary)
        diagnostics = residual_summary(fit, train_ds.features, train_ds.targets)
        entry = {
            "n": fit.n,
            "coefficients": fit.coefficients,
            "residual_std": fit.residual_std,
            "mean_width": {_level_label(a): float(np.mean(b.widths)) for a, b in bands.items()},
            "training_outside": int(np.sum(~train_band.contains(train_ds.targets))),
            "residuals": dataclasses.asdict(diagnostics),
        }
        holdout_pair = None
        if holdout is not None:
            held_band = predict_intervals(fit, holdout.features, primary)
            outside = ~held_band.contains(holdout.targets)
            entry["holdout_outside"] = int(outside.sum())
            entry["holdout_outside_x"] = holdout.features[outside, 0]
            holdout_pair = (holdout.features, holdout.targets)
            if outside.any():
                _LOGGER.warning("%s: %d of %d extrapolated points fall outside their interval", name, outside.sum(), holdout.n)
        if train_ds.k == 1:
            plotting.plot_interval_band(
                train_ds.features,
                train_ds.targets,
                grid,
                bands[primary],
                run.path(f"band_{name}.svg"),
                title=name,
                holdout=holdout_pair,
            )
        summary[name] = entry
    return summary


# -- forest-uq ---------------------------------------------------------------


def cmd_forest_uq(config: Config, run: RunContext) -> dict[str, Any]:
    """Random forest with entropy decomposition and accuracy-rejection curves."""
    is_iris = not config.get("data")
    ds = _load_classification(config, load_iris)
    train_size = config["train_size"]
    sizes = (train_size, 1.0 - train_size) if train_size < 1 else (int(train_size), ds.n - int(train_size))
    train_ds, test_ds = split(ds, SplitSpec(sizes, config["seed"]))

    forest_config = ForestConfig(
        trees_count=config["trees"],
        max_depth=config["max_depth"],
        features_per_split=config["features_per_split"],
        master_seed=config["seed"],
        bootstrap=config["bootstrap"],
        n_jobs=config["n_jobs"],
    )
    forest = train_forest(train_ds.features, train_ds.targets, forest_config, n_classes=ds.n_classes)
    save_forest(forest, run.path("forest.json"))

    member_probs = forest_predict_proba_batch(forest, test_ds.features)
    decomposition = decompose_batch(member_probs, config["log_base"])
    predictions = forest_predict_batch(forest, test_ds.features, config["vote"])
    run.write_frame(
        "uncertainty.csv",
        pd.DataFrame(
            {
                "row": np.arange(test_ds.n),
                "truth": test_ds.targets,
                "prediction": predictions,
                "total": decomposition.total,
                "aleatoric": decomposition.aleatoric,
                "epistemic": decomposition.epistemic,
            }
        ),
    )
    curves = curves_for_decomposition(decomposition, predictions, test_ds.targets, "accuracy")
    target = float(config["target_accuracy"])
    summary: dict[str, Any] = {
        "n_train": train_ds.n,
        "n_test": test_ds.n,
        "accuracy": float(np.mean(predictions == test_ds.targets)),
        "log_base": decomposition.log_base,
        "target_accuracy": target,
        "thresholds": _write_curves(run, "rejection", curves, target),
    }
    if is_iris:
        flower_class = forest_predict(forest, IRIS_TEST_FLOWER, config["vote"])
        summary["test_flower"] = {
            "features": IRIS_TEST_FLOWER,
            "prediction": ds.class_labels[flower_class],
            "uncertainty": dataclasses.asdict(decompose(forest_predict_proba(forest, IRIS_TEST_FLOWER), config["log_base"])),
        }
    return summary


# -- bnn ---------------------------------------------------------------------


def _regression_data(config: Config) -> tuple[Dataset, Dataset, SineConfig | None]:
    if config.get("data"):
        ds = load_csv(config["data"], config["target"], TargetKind.REGRESSION)
        train_ds, test_ds = split(ds, SplitSpec((0.8, 0.2), config["seed"]))
        return train_ds, test_ds, None
    sine = SineConfig.from_dict({**config["sine"], "master_seed": config["seed"]})
    train_ds, test_ds = synth_sine(sine)
    return train_ds, test_ds, sine


def _mean_where(values: np.ndarray, mask: np.ndarray) -> float | None:
    return float(values[mask].mean()) if mask.any() else None


def cmd_bnn(config: Config, run: RunContext) -> dict[str, Any]:
    """Train the MC-dropout network and write uncertainty tables and RMSE-rejection curves."""
    train_ds, test_ds, sine = _regression_data(config)
    mlp_config = MlpConfig(
        layer_sizes=(train_ds.k, *config["hidden"], 2),
        dropout_rate=config["dropout_rate"],
        l2_weight=config["l2_weight"],
        learning_rate=config["learning_rate"],
        epochs=config["epochs"],
        batch_size=config["batch_size"],
        mc_passes=config["mc_passes"],
        master_seed=config["seed"],
        momentum=config["momentum"],
        grad_clip=config["grad_clip"],
        n_jobs=config["n_jobs"],
    )
    net = train(train_ds.features, train_ds.targets, mlp_config)
    save_mlp(net, run.path("model.json"))
    write_training_log(net, run.path("training_log.csv"))

    batch = mc_predict_batch(net, test_ds.features, mlp_config)
    table = pd.DataFrame(test_ds.features, columns=list(test_ds.feature_names))
    table["truth"] = test_ds.targets
    table["mean"] = batch.mean
    table["epistemic_var"] = batch.epistemic_var
    table["aleatoric_var"] = batch.aleatoric_var
    table["total_var"] = batch.total_var
    run.write_frame("predictions.csv", table)
    if test_ds.k == 1:
        plotting.plot_mc_prediction(
            test_ds.features, test_ds.targets, batch, run.path("predictions.svg"), train=(train_ds.features, train_ds.targets)
        )

    uncertainties = {"epistemic": batch.epistemic_var, "aleatoric": batch.aleatoric_var, "total": batch.total_var}
    curves = {name: rejection_curve(u, batch.mean, test_ds.targets, "rmse") for name, u in uncertainties.items()}
    target = float(config["target_rmse"])
    summary: dict[str, Any] = {
        "n_train": train_ds.n,
        "n_test": test_ds.n,
        "initial_loss": net.loss_history[0],
        "final_loss": min(net.loss_history),
        "rmse": curves["total"].points[0].metric_value,
        "rmse_at_half_rejected": {name: c.metric_at(0.5) for name, c in curves.items()},
        "target_rmse": target,
        "thresholds": _write_curves(run, "rejection", curves, target),
    }
    if sine is not None:
        x = test_ds.features[:, 0]
        lo, hi = sine.train_domain
        inside = (x >= lo) & (x <= hi)
        summary["epistemic_inside_train_domain"] = _mean_where(batch.epistemic_var, inside)
        summary["epistemic_outside_train_domain"] = _mean_where(batch.epistemic_var, ~inside)
        noisy = (x > sine.noisy_interval[0]) & (x < hi)
        quiet = (x < sine.noisy_interval[0]) & (x > lo)
        summary["aleatoric_noisy"] = _mean_where(batch.aleatoric_var, noisy)
        summary["aleatoric_noise_free"] = _mean_where(batch.aleatoric_var, quiet)
    return summary


# -- conformal ---------------------------------------------------------------


def _conformal_classification(config: Config, run: RunContext) -> dict[str, Any]:
    ds = _load_classification(config)
    total = sum(config["split"])
    if total < ds.n:
        ds = subsample(ds, int(total), config["seed"])
    train_ds, cal_ds, test_ds = split(ds, SplitSpec(tuple(config["split"]), config["seed"]))

    forest_config = ForestConfig(
        trees_count=config["trees"],
        max_depth=config["max_depth"],
        master_seed=config["seed"],
        n_jobs=config["n_jobs"],
    )
    forest = train_forest(train_ds.features, train_ds.targets, forest_config, n_classes=ds.n_classes)
    cal_probs = forest_predict_proba_batch(forest, cal_ds.features).mean(axis=0)
    test_probs = forest_predict_proba_batch(forest, test_ds.features).mean(axis=0)

    scores = classification_scores(cal_probs, cal_ds.targets)
    calibration = calibrate(scores, config["alpha"], ScoreKind.CLASSIFICATION)
    save_calibration(calibration, run.path("calibration.json"))
    run.write_frame("calibration_scores.csv", pd.DataFrame({"truth": cal_ds.targets, "score": scores}))

    sets = predict_sets(test_probs, calibration, force_top1=config["force_top1"])
    run.write_frame(
        "prediction_sets.csv",
        pd.DataFrame(
            {
                "row": np.arange(test_ds.n),
                "truth": test_ds.targets,
                "prediction_set": [" ".join(str(c) for c in s.class_indices) for s in sets],
                "size": [len(s) for s in sets],
            }
        ),
    )
    histogram = set_size_histogram(sets, ds.n_classes)
    run.write_frame("set_sizes.csv", pd.DataFrame({"size": np.arange(histogram.size), "count": histogram}))
    plotting.plot_set_sizes(histogram, run.path("set_sizes.svg"))
    return {
        "task": "classification",
        "n_train": train_ds.n,
        "n_calibration": calibration.n,
        "n_test": test_ds.n,
        "alpha": calibration.alpha,
        "k": calibration.k,
        "q_hat": calibration.q_hat,
        "set_threshold": calibration.set_threshold,
        "coverage": empirical_coverage(sets, test_ds.targets),
        "coverage_bounds": calibration.coverage_bounds,
        "mean_set_size": mean_set_size(sets),
        "empty_sets": int(histogram[0]),
    }


def _conformal_regression(config: Config, run: RunContext) -> dict[str, Any]:
    if config.get("data"):
        ds = load_csv(config["data"], config["target"], TargetKind.REGRESSION)
        total = sum(config["split"])
        if total < ds.n:
            ds = subsample(ds, int(total), config["seed"])
    else:
        ds = synth_linear(LinearConfig.from_dict({"n": int(sum(config["split"])), **config["linear"], "master_seed": config["seed"]}))
    train_ds, cal_ds, test_ds = split(ds, SplitSpec(tuple(config["split"]), config["seed"]))

    fit = fit_ols(train_ds.features, train_ds.targets)
    kind = ScoreKind(f"regression-{config['score']}")
    scores = regression_scores(predict(fit, cal_ds.features), cal_ds.targets, kind)
    calibration = calibrate(scores, config["alpha"], kind)
    save_calibration(calibration, run.path("calibration.json"))

    test_points = predict(fit, test_ds.features)
    intervals = predict_intervals_conformal(test_points, calibration)
    ols_band = predict_intervals(fit, test_ds.features, config["alpha"])
    run.write_frame(
        "prediction_intervals.csv",
        pd.DataFrame(
            {
                "row": np.arange(test_ds.n),
                "truth": test_ds.targets,
                "prediction": test_points,
                "lower": [i.lower for i in intervals],
                "upper": [i.upper for i in intervals],
                "ols_lower": ols_band.lower,
                "ols_upper": ols_band.upper,
            }
        ),
    )
    return {
        "task": "regression",
        "score": kind,
        "n_train": train_ds.n,
        "n_calibration": calibration.n,
        "n_test": test_ds.n,
        "alpha": calibration.alpha,
        "k": calibration.k,
        "q_hat": calibration.q_hat,
        "coverage": empirical_coverage(intervals, test_ds.targets),
        "coverage_bounds": calibration.coverage_bounds,
        "interval_width": intervals[0].width,
        "ols_coverage": float(np.mean(ols_band.contains(test_ds.targets))),
        "ols_mean_width": float(np.mean(ols_band.widths)),
    }


def cmd_conformal(config: Config, run: RunContext) -> dict[str, Any]:
    """Split conformal prediction sets (forest) or intervals (OLS)."""
    if config["task"] == "classification":
        return _conformal_classification(config, run)
    if config["task"] == "regression":
        return _conformal_regression(config, run)
    raise InvalidConfig(f"unknown conformal task {config['task']!r}")


# -- synth / fetch-covertype -------------------------------------------------


def cmd_synth(config: Config, run: RunContext) -> dict[str, Any]:
    kind = config["kind"]
    if kind == "sine":
        train_ds, test_ds = synth_sine(SineConfig.from_dict({**config["sine"], "master_seed": config["seed"]}))
        to_csv(train_ds, run.path("sine_train.csv"))
        to_csv(test_ds, run.path("sine_test.csv"))
        return {"kind": kind, "n_train": train_ds.n, "n_test": test_ds.n}
    if kind == "linear":
        ds = synth_linear(LinearConfig.from_dict({**config["linear"], "master_seed": config["seed"]}))
        to_csv(ds, run.path("linear.csv"))
        return {"kind": kind, "n": ds.n, "k": ds.k}
    if kind == "spending":
        train_ds, holdout = spending_scenario(config["scenario"], config["seed"])
        to_csv(train_ds, run.path(f"spending_{config['scenario']}.csv"))
        if holdout is not None:
            to_csv(holdout, run.path(f"spending_{config['scenario']}_holdout.csv"))
        return {"kind": kind, "scenario": config["scenario"], "n": train_ds.n}
    raise InvalidConfig(f"unknown synth kind {kind!r}")


def cmd_fetch_covertype(config: Config, run: RunContext) -> dict[str, Any]:
    path = fetch_covertype(run.path("covtype.csv"), data_home=config["data_home"])
    return {"path": path}


# -- wiring ------------------------------------------------------------------


DEFAULTS: dict[str, Config] = {
    "ols": {
        "seed": DEFAULT_SEED,
        "alpha": DEFAULT_ALPHA,
        "extra_alphas": [0.2],
        "scenarios": list(SPENDING_SCENARIOS),
        "grid_points": 101,
        "data": None,
        "target": "y",
    },
    "forest-uq": {
        "seed": DEFAULT_SEED,
        "data": None,
        "target": IRIS_TARGET,
        "train_size": 30,
        "trees": DEFAULT_TREES,
        "max_depth": DEFAULT_MAX_DEPTH,
        "features_per_split": None,
        "bootstrap": True,
        "n_jobs": 1,
        "log_base": "2",
        "vote": "hard",
        "target_accuracy": 0.97,
    },
    "bnn": {
        "seed": DEFAULT_SEED,
        "data": None,
        "target": "y",
        "sine": {},
        "hidden": list(DEFAULT_HIDDEN),
        "dropout_rate": 0.1,
        "l2_weight": 1e-4,
        "learning_rate": 0.01,
        "epochs": 300,
        "batch_size": 32,
        "mc_passes": DEFAULT_MC_PASSES,
        "momentum": 0.9,
        "grad_clip": 5.0,
        "n_jobs": 1,
        "target_rmse": 0.25,
    },
    "conformal": {
        "seed": DEFAULT_SEED,
        "alpha": 0.2,
        "task": "classification",
        "data": None,
        "target": COVERTYPE_TARGET,
        "split": [6400, 1600, 2000],
        "trees": DEFAULT_TREES,
        "max_depth": DEFAULT_MAX_DEPTH,
        "n_jobs": 1,
        "force_top1": False,
        "score": "absolute",
        "linear": {},
    },
    "synth": {
        "seed": DEFAULT_SEED,
        "kind": "sine",
        "scenario": "base",
        "sine": {},
        "linear": {},
    },
    "fetch-covertype": {
        "seed": DEFAULT_SEED,
        "data_home": None,
    },
}

HANDLERS: dict[str, Callable[[Config, RunContext], dict[str, Any]]] = {
    "ols": cmd_ols,
    "forest-uq": cmd_forest_uq,
    "bnn": cmd_bnn,
    "conformal": cmd_conformal,
    "synth": cmd_synth,
    "fetch-covertype": cmd_fetch_covertype,
}


def _optional_int(value: str) -> int | None:
    return None if value.lower() == "none" else int(value)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config, or a manifest.json from an earlier run")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (u64)")
    common.add_argument("--alpha", type=float, default=argparse.SUPPRESS, help="miscoverage level")
    common.add_argument("--out", type=Path, help="output directory (default: results/<command>)")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="uq-toolkit", description="Uncertainty quantification experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    s = argparse.SUPPRESS

    ols = sub.add_parser("ols", parents=[common], help="OLS prediction intervals per scenario")
    ols.add_argument("--scenarios", nargs="+", choices=SPENDING_SCENARIOS, default=s)
    ols.add_argument("--data", default=s, help="regression CSV instead of the built-in scenarios")
    ols.add_argument("--target", default=s)
    ols.add_argument("--grid-points", dest="grid_points", type=int, default=s)

    forest = sub.add_parser("forest-uq", parents=[common], help="random forest entropy decomposition")
    forest.add_argument("--data", default=s, help="classification CSV (default: bundled Iris)")
    forest.add_argument("--target", default=s)
    forest.add_argument("--train-size", dest="train_size", type=float, default=s)
    forest.add_argument("--trees", type=int, default=s)
    forest.add_argument("--max-depth", dest="max_depth", type=_optional_int, default=s)
    forest.add_argument("--n-jobs", dest="n_jobs", type=int, default=s)
    forest.add_argument("--log-base", dest="log_base", choices=("2", "e"), default=s)
    forest.add_argument("--vote", choices=("hard", "soft"), default=s)
    forest.add_argument("--target-accuracy", dest="target_accuracy", type=float, default=s)

    bnn = sub.add_parser("bnn", parents=[common], help="MC dropout network on the sinusoid")
    bnn.add_argument("--data", default=s, help="regression CSV (default: synthetic sinusoid)")
    bnn.add_argument("--target", default=s)
    bnn.add_argument("--hidden", type=int, nargs="+", default=s)
    bnn.add_argument("--dropout-rate", dest="dropout_rate", type=float, default=s)
    bnn.add_argument("--epochs", type=int, default=s)
    bnn.add_argument("--learning-rate", dest="learning_rate", type=float, default=s)
    bnn.add_argument("--mc-passes", dest="mc_passes", type=int, default=s)
    bnn.add_argument("--n-jobs", dest="n_jobs", type=int, default=s)
    bnn.add_argument("--target-rmse", dest="target_rmse", type=float, default=s)

    conformal = sub.add_parser("conformal", parents=[common], help="split conformal prediction")
    conformal.add_argument("--task", choices=("classification", "regression"), default=s)
    conformal.add_argument("--data", default=s, help=f"CSV path (classification default: ${ENV_COVERTYPE})")
    conformal.add_argument("--target", default=s)
    conformal.add_argument("--split", type=int, nargs=3, metavar=("TRAIN", "CAL", "TEST"), default=s)
    conformal.add_argument("--trees", type=int, default=s)
    conformal.add_argument("--max-depth", dest="max_depth", type=_optional_int, default=s)
    conformal.add_argument("--n-jobs", dest="n_jobs", type=int, default=s)
    conformal.add_argument("--score", choices=("absolute", "squared"), default=s)
    conformal.add_argument("--force-top1", dest="force_top1", action="store_true", default=s)

    synth = sub.add_parser("synth", parents=[common], help="write synthetic datasets as CSV")
    synth.add_argument("--kind", choices=("sine", "linear", "spending"), default=s)
    synth.add_argument("--scenario", choices=SPENDING_SCENARIOS, default=s)

    fetch = sub.add_parser("fetch-covertype", parents=[common], help="download the covertype data as CSV")
    fetch.add_argument("--data-home", dest="data_home", default=s)
    return parser


_NON_CONFIG_ARGS = {"command", "config", "out", "verbose", "quiet"}


def resolve_config(command: str, args: argparse.Namespace) -> Config:
    """
    Defaults, then the --config file, then flags; later sources win.

    Conformal classification without --data takes its CSV from $UQ_TOOLKIT_COVERTYPE,
    recorded in the config so a manifest re-run does not need the variable.
    """
    config = copy.deepcopy(DEFAULTS[command])
    if args.config is not None:
        loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if isinstance(loaded, dict) and "config" in loaded and "command" in loaded:
            if loaded["command"] != command:
                raise InvalidConfig(f"{args.config} is a manifest for {loaded['command']!r}, not {command!r}")
            loaded = loaded["config"]
        if not isinstance(loaded, dict):
            raise InvalidConfig(f"{args.config} must hold a JSON object")
        unknown = set(loaded) - set(config)
        if unknown:
            raise InvalidConfig(f"unknown {command} config keys: {sorted(unknown)}")
        config.update(loaded)
    for key, value in vars(args).items():
        if key in _NON_CONFIG_ARGS:
            continue
        if key not in config:
            _LOGGER.warning("--%s has no effect on %s", key.replace("_", "-"), command)
            continue
        config[key] = value
    if command == "conformal" and config["task"] == "classification" and not config.get("data"):
        config["data"] = os.environ.get(ENV_COVERTYPE) or None
    return config


def _configure_logging(verbose: int, quiet: bool) -> None:
    if quiet:
        level = logging.ERROR
    else:
        level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(verbose, 2)]
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def run_command(command: str, config: Config, out: str | Path) -> dict[str, Any]:
    """Execute one subcommand, writing its artifacts plus manifest and summary."""
    run = RunContext.open(out)
    try:
        summary = HANDLERS[command](config, run)
        run.write_json(SUMMARY_FILE, summary)
        run.write_json(MANIFEST_FILE, {"command": command, "version": __version__, "config": config})
    except BaseException:
        run.discard()
        raise
    _LOGGER.info("Wrote %d artifacts to %s", len(run.written), run.out)
    return summary


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as ex:
        return int(ex.code or 0)
    _configure_logging(args.verbose, args.quiet)

    command = args.command
    out = args.out or Path("results") / command
    try:
        config = resolve_config(command, args)
        summary = run_command(command, config, out)
    except InvalidConfig as ex:
        _LOGGER.error("Invalid configuration: %s", ex)
        return EXIT_USAGE_ERROR
    except UncertaintyError as ex:
        _LOGGER.error("%s failed: %s", command, ex)
        return EXIT_DOMAIN_ERROR
    except OSError as ex:
        _LOGGER.error("I/O error: %s", ex)
        return EXIT_IO_ERROR
    except (ValueError, TypeError, KeyError) as ex:
        _LOGGER.error("Invalid configuration: %s", ex)
        return EXIT_USAGE_ERROR

    print(json.dumps(to_json(summary), indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
