from __future__ import annotations

import dataclasses
import logging
from functools import cached_property

import numpy as np
from scipy import stats

from .numerics import as_matrix, as_vector, solve_spd, spd_inverse, t_quantile
from .exceptions import (
    CollinearDesign,
    DimensionMismatch,
    InvalidAlpha,
    NotPositiveDefinite,
    TooFewObservations,
)

_LOGGER = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True, eq=False)
class OlsFit:
    """
    Ordinary least squares fit of an intercept-augmented design.

    Attributes:
        coefficients: b, length p, intercept first
        xtx: XᵀX of the augmented design (p×p)
        xtx_inverse: (XᵀX)⁻¹ (p×p)
        residual_variance: s² = eᵀe / (n - p), in squared target units
        n: observation count
        p: design columns (k regressors + 1 intercept)
    """

    coefficients: np.ndarray
    xtx: np.ndarray
    xtx_inverse: np.ndarray
    residual_variance: float
    n: int
    p: int

    @property
    def k(self) -> int:
        return self.p - 1

    @property
    def df(self) -> int:
        return self.n - self.p

    @cached_property
    def residual_std(self) -> float:
        return float(np.sqrt(self.residual_variance))


@dataclasses.dataclass(frozen=True)
class PredictionInterval:
    point: float
    lower: float
    upper: float
    level: float

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, y: float) -> bool:
        return self.lower <= y <= self.upper


@dataclasses.dataclass(frozen=True, eq=False)
class IntervalBand:
    """Prediction intervals evaluated over many rows at one confidence level."""

    points: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float

    @cached_property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, y) -> np.ndarray:
        y = as_vector(y, "y")
        return (self.lower <= y) & (y <= self.upper)


@dataclasses.dataclass(frozen=True)
class ResidualSummary:
    """
    Quick residual diagnostics (not a formal test).

    Attributes:
        mean: mean residual; near zero when the model is unbiased
        std: residual standard deviation
        spread_correlation: Spearman correlation of |e| with fitted values;
            clearly positive values hint at heteroscedastic noise
    """

    mean: float
    std: float
    spread_correlation: float


def _augment(x: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((x.shape[0], 1)), x])


def fit_ols(x, y) -> OlsFit:
    """
    Fit y = [1|x]b by least squares.

    Args:
        x: n×k regressor matrix (no intercept column; one is added)
        y: n targets

    Returns:
        OlsFit: coefficients, (XᵀX)⁻¹ and the unbiased residual variance.

    Raises:
        TooFewObservations: n < k + 2, leaving no residual degrees of freedom
        CollinearDesign: the augmented design is rank deficient
        DimensionMismatch: x and y disagree on n
    """
    x = as_matrix(x, "x")
    y = as_vector(y, "y")
    n, k = x.shape
    if y.shape[0] != n:
        raise DimensionMismatch(f"x has {n} rows but y has {y.shape[0]} entries")
    if n < k + 2:
        raise TooFewObservations(f"need at least {k + 2} observations for {k} regressors, got {n}")

    design = _augment(x)
    xtx = design.T @ design
    xty = design.T @ y
    try:
        coefficients = solve_spd(xtx, xty)
        xtx_inverse = spd_inverse(xtx)
    except NotPositiveDefinite as ex:
        raise CollinearDesign(f"design columns are collinear: {ex}") from ex

    e = y - design @ coefficients
    p = k + 1
    s2 = max(0.0, float(e @ e) / (n - p))
    _LOGGER.debug("OLS fit n=%d p=%d s2=%.6g coefficients=%s", n, p, s2, coefficients)
    return OlsFit(
        coefficients=coefficients,
        xtx=xtx,
        xtx_inverse=xtx_inverse,
        residual_variance=s2,
        n=n,
        p=p,
    )


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise InvalidAlpha(f"alpha must lie in (0, 1), got {alpha!r}")


def _regressor_rows(fit: OlsFit, x) -> np.ndarray:
    x = as_matrix(np.atleast_2d(np.asarray(x, dtype=np.float64)), "x")
    if x.shape[1] != fit.k:
        raise DimensionMismatch(f"expected {fit.k} regressors, got {x.shape[1]}")
    return x


def predict(fit: OlsFit, x) -> np.ndarray:
    """Point predictions [1|x]b for each row of x."""
    return _augment(_regressor_rows(fit, x)) @ fit.coefficients


def predict_intervals(fit: OlsFit, x, alpha: float) -> IntervalBand:
    """
    Vectorized :func:`predict_interval` over the rows of x.

    The leverage term x_aᵀ(XᵀX)⁻¹x_a is evaluated as solve-then-dot against
    XᵀX rather than through the stored inverse.
    """
    _check_alpha(alpha)
    design = _augment(_regressor_rows(fit, x))
    points = design @ fit.coefficients
    leverage = np.einsum("ij,ji->i", design, solve_spd(fit.xtx, design.T))
    t = t_quantile(1.0 - alpha / 2.0, fit.df)
    half = t * fit.residual_std * np.sqrt(1.0 + leverage)
    if fit.residual_variance == 0.0:
        _LOGGER.debug("Perfect fit: prediction intervals have zero width")
    return IntervalBand(points=points, lower=points - half, upper=points + half, level=1.0 - alpha)


def predict_interval(fit: OlsFit, x_h, alpha: float) -> PredictionInterval:
    """
    Prediction interval for a single observation.

    Half-width is t(1 - α/2, n - p) · s · sqrt(1 + x_aᵀ(XᵀX)⁻¹x_a), where x_a is
    x_h with a leading 1.

    Raises:
        InvalidAlpha: alpha not in (0, 1)
        DimensionMismatch: x_h does not have k entries
    """
    x_h = as_vector(x_h, "x_h")
    band = predict_intervals(fit, x_h[None, :], alpha)
    return PredictionInterval(
        point=float(band.points[0]),
        lower=float(band.lower[0]),
        upper=float(band.upper[0]),
        level=band.level,
    )


def residuals(fit: OlsFit, x, y) -> np.ndarray:
    """e = y - [1|x]b."""
    x = _regressor_rows(fit, x)
    y = as_vector(y, "y")
    if y.shape[0] != x.shape[0]:
        raise DimensionMismatch(f"x has {x.shape[0]} rows but y has {y.shape[0]} entries")
    return y - _augment(x) @ fit.coefficients


def residual_summary(fit: OlsFit, x, y) -> ResidualSummary:
    e = residuals(fit, x, y)
    fitted = predict(fit, x)
    if np.ptp(e) == 0.0 or np.ptp(fitted) == 0.0:
        rho = 0.0
    else:
        rho = float(stats.spearmanr(np.abs(e), fitted).statistic)
    return ResidualSummary(mean=float(e.mean()), std=float(e.std(ddof=0)), spread_correlation=rho)
