from __future__ import annotations

import logging
import math
from collections.abc import Mapping
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import numpy as np
from matplotlib.figure import Figure

from .bnn import McBatch
from .linreg import IntervalBand
from .selective import RejectionCurve

_LOGGER = logging.getLogger(__name__)

# fixed ids and no timestamp so identical inputs give identical files
matplotlib.rcParams["svg.hashsalt"] = "uq_toolkit"
_SVG_METADATA = {"Date": None, "Creator": None}


def _save(fig: Figure, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata=_SVG_METADATA)
    _LOGGER.debug("Wrote figure %s", path)
    return path


def plot_interval_band(
    x_train,
    y_train,
    grid,
    band: IntervalBand,
    path: str | Path,
    title: str = "",
    holdout: tuple[np.ndarray, np.ndarray] | None = None,
) -> Path:
    """Training points, fitted line and the prediction band over a 1-D grid."""
    fig = Figure(figsize=(6, 4), tight_layout=True)
    ax = fig.add_subplot()
    grid = np.asarray(grid).reshape(-1)
    ax.fill_between(grid, band.lower, band.upper, color="tab:blue", alpha=0.2, label=f"{band.level:.0%} prediction interval")
    ax.plot(grid, band.points, color="tab:blue", label="fit")
    ax.scatter(np.asarray(x_train).reshape(-1), y_train, color="black", s=12, zorder=3, label="training")
    if holdout is not None:
        ax.scatter(holdout[0].reshape(-1), holdout[1], color="tab:red", marker="x", zorder=3, label="held out")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize="small")
    return _save(fig, path)


def plot_rejection_curves(curves: Mapping[str, RejectionCurve], path: str | Path, target: float | None = None) -> Path:
    """One panel per curve: metric on the left axis, uncertainty threshold on the right."""
    fig = Figure(figsize=(4 * len(curves), 3.5), tight_layout=True)
    axes = fig.subplots(1, len(curves), squeeze=False)[0]
    for ax, (name, curve) in zip(axes, curves.items()):
        ax.step(curve.fractions, curve.metrics, where="post", color="tab:blue")
        ax.set_xlabel("fraction rejected")
        ax.set_ylabel(curve.metric_kind.value, color="tab:blue")
        ax.set_title(name)
        if target is not None:
            ax.axhline(target, color="tab:grey", linestyle="--", linewidth=0.8)
        twin = ax.twinx()
        finite = np.isfinite(curve.thresholds)
        twin.step(curve.fractions[finite], curve.thresholds[finite], where="post", color="tab:red")
        twin.set_ylabel("uncertainty threshold", color="tab:red")
    return _save(fig, path)


def plot_mc_prediction(
    x_test,
    y_test,
    batch: McBatch,
    path: str | Path,
    train: tuple[np.ndarray, np.ndarray] | None = None,
) -> Path:
    """MC mean with ±2σ epistemic and total bands, sorted by x."""
    x = np.asarray(x_test).reshape(-1)
    order = np.argsort(x, kind="stable")
    x = x[order]
    mean = batch.mean[order]
    epistemic = 2.0 * np.sqrt(batch.epistemic_var[order])
    total = 2.0 * np.sqrt(batch.total_var[order])

    fig = Figure(figsize=(7, 4), tight_layout=True)
    ax = fig.add_subplot()
    ax.fill_between(x, mean - total, mean + total, color="tab:orange", alpha=0.2, label="total ±2σ")
    ax.fill_between(x, mean - epistemic, mean + epistemic, color="tab:blue", alpha=0.3, label="epistemic ±2σ")
    ax.plot(x, mean, color="tab:blue", label="MC mean")
    ax.scatter(x, np.asarray(y_test).reshape(-1)[order], color="black", s=8, label="test")
    if train is not None:
        ax.scatter(train[0].reshape(-1), train[1], color="tab:grey", s=6, alpha=0.6, label="train")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.legend(loc="best", fontsize="small")
    return _save(fig, path)


def plot_set_sizes(histogram, path: str | Path) -> Path:
    """Bar chart of conformal prediction-set sizes."""
    counts = np.asarray(histogram)
    fig = Figure(figsize=(5, 3.5), tight_layout=True)
    ax = fig.add_subplot()
    ax.bar(np.arange(counts.size), counts, color="tab:blue")
    ax.set_xlabel("prediction set size")
    ax.set_ylabel("count")
    ax.set_xticks(np.arange(counts.size))
    ax.set_ylim(0, max(1, math.ceil(counts.max() * 1.1)) if counts.size else 1)
    return _save(fig, path)
