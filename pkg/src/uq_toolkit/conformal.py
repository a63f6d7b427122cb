from __future__ import annotations

import dataclasses
import json
import logging
import math
from collections.abc import Sequence
from enum import StrEnum
from pathlib import Path
from typing import Any

import numpy as np

from .const import RANK_EPSILON
from .exceptions import (
    EmptyInput,
    IndexOutOfRange,
    InsufficientCalibration,
    InvalidAlpha,
    InvalidConfig,
    LengthMismatch,
)
from .numerics import as_vector

_LOGGER = logging.getLogger(__name__)


class ScoreKind(StrEnum):
    CLASSIFICATION = "classification"
    REGRESSION_ABSOLUTE = "regression-absolute"
    REGRESSION_SQUARED = "regression-squared"

    @property
    def is_regression(self) -> bool:
        return self is not ScoreKind.CLASSIFICATION


@dataclasses.dataclass(frozen=True)
class CalibrationResult:
    """
    Calibrated conformal threshold.

    Attributes:
        q_hat: the k-th smallest calibration score
        alpha: miscoverage level
        n: calibration set size
        k: rank ceil((n + 1)(1 - alpha)), 1-based
        score_kind: which nonconformity score produced q_hat
    """

    q_hat: float
    alpha: float
    n: int
    k: int
    score_kind: ScoreKind = ScoreKind.CLASSIFICATION

    @property
    def set_threshold(self) -> float:
        """Minimum softmax probability a class needs to enter a prediction set."""
        return 1.0 - self.q_hat

    @property
    def coverage_bounds(self) -> tuple[float, float]:
        return 1.0 - self.alpha, 1.0 - self.alpha + 1.0 / (self.n + 1)


@dataclasses.dataclass(frozen=True)
class PredictionSet:
    class_indices: tuple[int, ...]

    def __contains__(self, label: object) -> bool:
        return label in self.class_indices

    def __len__(self) -> int:
        return len(self.class_indices)


@dataclasses.dataclass(frozen=True)
class ConformalInterval:
    lower: float
    upper: float

    def __contains__(self, y: object) -> bool:
        return self.lower <= float(y) <= self.upper

    @property
    def width(self) -> float:
        return self.upper - self.lower


def classification_scores(softmaxes, truths) -> np.ndarray:
    """
    s_i = 1 - p_i[truth_i], one score per calibration observation.

    Raises:
        LengthMismatch: softmaxes and truths differ in length
        IndexOutOfRange: a truth index is outside its probability vector
    """
    probs = np.asarray(softmaxes, dtype=np.float64)
    labels = np.asarray(truths).reshape(-1)
    if probs.ndim != 2:
        raise LengthMismatch(f"softmaxes must form an (n, classes) array, got shape {probs.shape}")
    if probs.shape[0] != labels.shape[0]:
        raise LengthMismatch(f"{probs.shape[0]} softmax rows but {labels.shape[0]} truths")
    codes = labels.astype(np.int64)
    if np.any(codes < 0) or np.any(codes >= probs.shape[1]) or not np.array_equal(codes, labels):
        raise IndexOutOfRange(f"truth labels must be integers in [0, {probs.shape[1]})")
    return 1.0 - probs[np.arange(codes.shape[0]), codes]


def regression_scores(predictions, truths, kind: ScoreKind | str = ScoreKind.REGRESSION_ABSOLUTE) -> np.ndarray:
    """|y - ŷ| or (y - ŷ)² depending on ``kind``."""
    kind = _regression_kind(kind)
    pred = as_vector(predictions, "predictions")
    truth = as_vector(truths, "truths")
    if pred.shape != truth.shape:
        raise LengthMismatch(f"{pred.size} predictions but {truth.size} truths")
    residual = truth - pred
    return np.abs(residual) if kind is ScoreKind.REGRESSION_ABSOLUTE else residual**2


def _regression_kind(kind: ScoreKind | str) -> ScoreKind:
    aliases = {"absolute": ScoreKind.REGRESSION_ABSOLUTE, "squared": ScoreKind.REGRESSION_SQUARED}
    resolved = aliases.get(kind, None) if isinstance(kind, str) else None
    resolved = resolved or ScoreKind(kind)
    if not resolved.is_regression:
        raise InvalidConfig(f"{resolved.value} is not a regression score kind")
    return resolved


def conformal_rank(n: int, alpha: float) -> int:
    """k = ceil((n + 1)(1 - alpha))."""
    return math.ceil((n + 1) * (1.0 - alpha) - RANK_EPSILON)


def calibrate(scores, alpha: float, score_kind: ScoreKind | str = ScoreKind.CLASSIFICATION) -> CalibrationResult:
    """
    Pick q̂ as the rank-k smallest calibration score.

    Duplicate scores need no special handling: the rank is taken over the
    sorted multiset.

    Raises:
        InvalidAlpha: alpha not in (0, 1)
        EmptyInput: no scores
        InsufficientCalibration: k > n, i.e. alpha is too small for n
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidAlpha(f"alpha must lie in (0, 1), got {alpha!r}")
    s = np.sort(as_vector(scores, "scores"))
    n = s.size
    if n == 0:
        raise EmptyInput("no calibration scores")
    k = conformal_rank(n, alpha)
    if k > n:
        raise InsufficientCalibration(
            f"rank {k} exceeds calibration size {n}; need at least {math.ceil(1 / alpha) - 1} scores for alpha={alpha}"
        )
    k = max(k, 1)
    result = CalibrationResult(q_hat=float(s[k - 1]), alpha=float(alpha), n=n, k=k, score_kind=ScoreKind(score_kind))
    _LOGGER.info("Calibrated %s scores: n=%d alpha=%.3g k=%d q_hat=%.6g", result.score_kind.value, n, alpha, k, result.q_hat)
    return result


def predict_set(softmax, cal: CalibrationResult, force_top1: bool = False) -> PredictionSet:
    """
    Classes whose score 1 - p is at most q̂, i.e. probability at least 1 - q̂.

    The set may be empty; with ``force_top1`` an empty set falls back to the
    single most probable class.
    """
    if cal.score_kind is not ScoreKind.CLASSIFICATION:
        raise InvalidConfig("predict_set needs a classification calibration")
    p = np.asarray(softmax, dtype=np.float64).reshape(-1)
    # same arithmetic as classification_scores, so a tie with q̂ is kept
    members = np.nonzero(1.0 - p <= cal.q_hat)[0]
    if members.size == 0:
        if force_top1:
            return PredictionSet((int(np.argmax(p)),))
        _LOGGER.debug("Empty prediction set (max probability %.4g < %.4g)", float(p.max()), cal.set_threshold)
    return PredictionSet(tuple(int(c) for c in members))


def predict_sets(softmaxes, cal: CalibrationResult, force_top1: bool = False) -> list[PredictionSet]:
    sets = [predict_set(p, cal, force_top1) for p in np.asarray(softmaxes, dtype=np.float64)]
    empty = sum(1 for s in sets if len(s) == 0)
    if empty:
        _LOGGER.warning("%d of %d prediction sets are empty", empty, len(sets))
    return sets


def predict_interval_conformal(prediction: float, cal: CalibrationResult) -> ConformalInterval:
    """[ŷ - q̂, ŷ + q̂] for absolute scores, [ŷ - √q̂, ŷ + √q̂] for squared scores."""
    if not cal.score_kind.is_regression:
        raise InvalidConfig("predict_interval_conformal needs a regression calibration")
    half = cal.q_hat if cal.score_kind is ScoreKind.REGRESSION_ABSOLUTE else math.sqrt(cal.q_hat)
    return ConformalInterval(lower=float(prediction) - half, upper=float(prediction) + half)


def predict_intervals_conformal(predictions, cal: CalibrationResult) -> list[ConformalInterval]:
    return [predict_interval_conformal(p, cal) for p in as_vector(predictions, "predictions")]


def empirical_coverage(sets_or_intervals: Sequence[PredictionSet | ConformalInterval], truths) -> float:
    """Fraction of truths contained in their set or interval."""
    truths = list(np.asarray(truths).reshape(-1))
    if len(sets_or_intervals) != len(truths):
        raise LengthMismatch(f"{len(sets_or_intervals)} sets but {len(truths)} truths")
    if not truths:
        raise EmptyInput("no predictions to evaluate")
    hits = sum(1 for region, y in zip(sets_or_intervals, truths) if _contains(region, y))
    return hits / len(truths)


def _contains(region: PredictionSet | ConformalInterval, y) -> bool:
    if isinstance(region, PredictionSet):
        return int(y) in region
    return y in region


def mean_set_size(sets: Sequence[PredictionSet]) -> float:
    if not sets:
        raise EmptyInput("no prediction sets")
    return float(np.mean([len(s) for s in sets]))


def set_size_histogram(sets: Sequence[PredictionSet], n_classes: int) -> np.ndarray:
    """Counts of sets of size 0..n_classes."""
    return np.bincount([len(s) for s in sets], minlength=n_classes + 1)


def calibration_to_dict(cal: CalibrationResult) -> dict[str, Any]:
    return {
        "alpha": cal.alpha,
        "n": cal.n,
        "k": cal.k,
        "q_hat": cal.q_hat,
        "score_kind": cal.score_kind.value,
    }


def save_calibration(cal: CalibrationResult, path: str | Path) -> None:
    Path(path).write_text(json.dumps(calibration_to_dict(cal), indent=2), encoding="utf-8")


def load_calibration(path: str | Path) -> CalibrationResult:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return CalibrationResult(
        q_hat=float(data["q_hat"]),
        alpha=float(data["alpha"]),
        n=int(data["n"]),
        k=int(data["k"]),
        score_kind=ScoreKind(data["score_kind"]),
    )
