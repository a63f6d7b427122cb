from __future__ import annotations

import dataclasses
import logging
import math
from enum import StrEnum

import numpy as np
import pandas as pd

from .exceptions import EmptyInput, LengthMismatch, NonFiniteValue
from .infotheory import DecompositionBatch

_LOGGER = logging.getLogger(__name__)

CURVE_COLUMNS = ("rejected_fraction", "metric", "threshold")


class MetricKind(StrEnum):
    ACCURACY = "accuracy"
    RMSE = "rmse"

    @property
    def higher_is_better(self) -> bool:
        return self is MetricKind.ACCURACY

    def meets(self, value: float, target: float) -> bool:
        return value >= target if self.higher_is_better else value <= target


@dataclasses.dataclass(frozen=True)
class CurvePoint:
    rejected_fraction: float
    metric_value: float
    uncertainty_threshold: float


@dataclasses.dataclass(frozen=True)
class RejectionCurve:
    """
    Metric of the retained predictions against the fraction rejected.

    Point m has the m most uncertain predictions removed. Its threshold is the
    smallest rejected uncertainty, so the retained set is everything strictly
    below it in the rejection order; the point with nothing rejected carries
    +inf.
    """

    points: tuple[CurvePoint, ...]
    metric_kind: MetricKind

    def __len__(self) -> int:
        return len(self.points)

    @property
    def fractions(self) -> np.ndarray:
        return np.array([p.rejected_fraction for p in self.points])

    @property
    def metrics(self) -> np.ndarray:
        return np.array([p.metric_value for p in self.points])

    @property
    def thresholds(self) -> np.ndarray:
        return np.array([p.uncertainty_threshold for p in self.points])

    def metric_at(self, rejected_fraction: float) -> float:
        """Metric at the largest curve fraction not exceeding ``rejected_fraction``."""
        idx = int(np.searchsorted(self.fractions, rejected_fraction, side="right")) - 1
        return self.points[max(idx, 0)].metric_value


@dataclasses.dataclass(frozen=True)
class ThresholdChoice:
    uncertainty_threshold: float
    rejected_fraction: float
    metric_value: float


def rejection_curve(uncertainties, predictions, truths, metric_kind: MetricKind | str) -> RejectionCurve:
    """
    Accuracy- (or RMSE-) rejection curve at every integer rejection count.

    Predictions are rejected from most to least uncertain; among equal
    uncertainties the lower original index is rejected first.

    Args:
        uncertainties: one finite uncertainty per prediction
        predictions: predicted class indices (accuracy) or values (rmse)
        truths: true class indices or values
        metric_kind: ``accuracy`` (higher is better) or ``rmse`` (lower is better)

    Raises:
        EmptyInput: fewer than two predictions
        LengthMismatch: inputs differ in length
    """
    kind = MetricKind(metric_kind)
    u = np.asarray(uncertainties, dtype=np.float64).reshape(-1)
    pred = np.asarray(predictions).reshape(-1)
    truth = np.asarray(truths).reshape(-1)
    if u.size < 2:
        raise EmptyInput(f"need at least two predictions, got {u.size}")
    if not (u.size == pred.size == truth.size):
        raise LengthMismatch(
            f"uncertainties ({u.size}), predictions ({pred.size}) and truths ({truth.size}) differ in length"
        )
    if not np.all(np.isfinite(u)):
        raise NonFiniteValue("uncertainties must be finite")

    n = u.size
    # lexsort: last key is primary -> sort by -u, then by index
    rejection_order = np.lexsort((np.arange(n), -u))
    retention_order = rejection_order[::-1]

    if kind is MetricKind.ACCURACY:
        per_item = (pred == truth).astype(np.float64)
    else:
        per_item = (pred.astype(np.float64) - truth.astype(np.float64)) ** 2
    running = np.cumsum(per_item[retention_order])
    kept = np.arange(1, n + 1, dtype=np.float64)
    means = running / kept
    if kind is MetricKind.RMSE:
        means = np.sqrt(means)

    points = []
    for m in range(n):
        threshold = math.inf if m == 0 else float(u[rejection_order[m - 1]])
        points.append(CurvePoint(m / n, float(means[n - m - 1]), threshold))
    return RejectionCurve(points=tuple(points), metric_kind=kind)


def threshold_for_target(curve: RejectionCurve, target_metric: float) -> ThresholdChoice | None:
    """
    Smallest rejection fraction whose retained metric meets ``target_metric``.

    Returns:
        ThresholdChoice, or None when even maximal rejection misses the target.
    """
    if not curve.points:
        raise EmptyInput("curve has no points")
    for point in curve.points:
        if curve.metric_kind.meets(point.metric_value, target_metric):
            return ThresholdChoice(point.uncertainty_threshold, point.rejected_fraction, point.metric_value)
    _LOGGER.info("Target %s %.4g not attainable on this curve", curve.metric_kind.value, target_metric)
    return None


def curves_for_decomposition(
    decomposition: DecompositionBatch, predictions, truths, metric_kind: MetricKind | str
) -> dict[str, RejectionCurve]:
    """Epistemic, aleatoric and total rejection curves over the same predictions."""
    return {
        name: rejection_curve(getattr(decomposition, name), predictions, truths, metric_kind)
        for name in ("epistemic", "aleatoric", "total")
    }


def curve_to_frame(curve: RejectionCurve) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "rejected_fraction": curve.fractions,
            "metric": curve.metrics,
            "threshold": curve.thresholds,
        },
        columns=list(CURVE_COLUMNS),
    )
