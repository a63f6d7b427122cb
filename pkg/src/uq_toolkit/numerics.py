from __future__ import annotations

import dataclasses
import logging
import math

import numpy as np
from scipy import linalg, optimize, special

from .const import (
    NORMAL_DF_THRESHOLD,
    PIVOT_TOLERANCE,
    PROB_SUM_TOLERANCE,
    SYMMETRY_TOLERANCE,
)
from .exceptions import (
    DimensionMismatch,
    InvalidDf,
    InvalidProbability,
    InvalidProbVector,
    NonFiniteValue,
    NotPositiveDefinite,
)

_LOGGER = logging.getLogger(__name__)

_MAX_SEED = 2**64


def as_matrix(data, name: str = "matrix") -> np.ndarray:
    """
    Convert array-like input into a finite, C-contiguous float64 2-D array.

    1-D input is treated as a single column.

    Raises:
        DimensionMismatch: input has more than two dimensions
        NonFiniteValue: input contains NaN or infinity
    """
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    elif arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim > 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"{name} contains NaN or infinite entries")
    return np.ascontiguousarray(arr)


def as_vector(data, name: str = "vector") -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    elif arr.ndim == 2 and 1 in arr.shape:
        arr = arr.reshape(-1)
    elif arr.ndim != 1:
        raise DimensionMismatch(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"{name} contains NaN or infinite entries")
    return arr


def as_prob_vector(data, name: str = "probabilities") -> np.ndarray:
    """Validate a ProbVector: entries in [0, 1] summing to 1 within 1e-9."""
    try:
        p = as_vector(data, name)
    except (NonFiniteValue, DimensionMismatch) as ex:
        raise InvalidProbVector(str(ex)) from ex
    if p.size == 0:
        raise InvalidProbVector(f"{name} is empty")
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise InvalidProbVector(f"{name} has entries outside [0, 1]: {p}")
    total = float(p.sum())
    if abs(total - 1.0) > PROB_SUM_TOLERANCE:
        raise InvalidProbVector(f"{name} sums to {total!r}, not 1")
    return p


@dataclasses.dataclass(frozen=True)
class RandomStream:
    """
    Counter-based reproducible random stream.

    The generator state is a pure function of ``(master_seed, stream_index, path)``
    hashed through numpy's ``SeedSequence``, so the same triple yields the same
    draws on every platform and regardless of which thread consumes it.
    Distinct indices give statistically independent streams.

    Attributes:
        master_seed: 64-bit non-negative seed shared by a whole run
        stream_index: top-level stream number (see the STREAM_* namespaces)
        path: nested child indices below ``stream_index``
    """

    master_seed: int
    stream_index: int = 0
    path: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not 0 <= int(self.master_seed) < _MAX_SEED:
            raise ValueError(f"master_seed must be a 64-bit unsigned integer, got {self.master_seed}")
        if self.stream_index < 0 or any(i < 0 for i in self.path):
            raise ValueError("stream indices must be non-negative")

    @property
    def spawn_key(self) -> tuple[int, ...]:
        return (int(self.stream_index), *map(int, self.path))

    def child(self, index: int) -> RandomStream:
        """Derive an independent stream one level below this one."""
        return RandomStream(self.master_seed, self.stream_index, (*self.path, int(index)))

    def generator(self) -> np.random.Generator:
        """Return a fresh generator positioned at the start of this stream."""
        seq = np.random.SeedSequence(entropy=int(self.master_seed), spawn_key=self.spawn_key)
        return np.random.Generator(np.random.PCG64(seq))


def solve_spd(a, b) -> np.ndarray:
    """
    Solve ``a @ x = b`` for a symmetric positive-definite ``a`` via Cholesky.

    Args:
        a: square symmetric positive-definite matrix
        b: right-hand side, vector or matrix with ``a.shape[0]`` rows

    Returns:
        np.ndarray: the solution with the same dimensionality as ``b``.

    Raises:
        DimensionMismatch: ``a`` not square, asymmetric, or incompatible with ``b``
        NotPositiveDefinite: a pivot is non-positive (relative to the diagonal)
    """
    a = as_matrix(a, "a")
    b_arr = np.asarray(b, dtype=np.float64)
    if not np.all(np.isfinite(b_arr)):
        raise NonFiniteValue("b contains NaN or infinite entries")
    n, m = a.shape
    if n != m:
        raise DimensionMismatch(f"a must be square, got {a.shape}")
    if b_arr.shape[0] != n:
        raise DimensionMismatch(f"b has {b_arr.shape[0]} rows, a has {n}")
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.T)) > SYMMETRY_TOLERANCE * scale:
        raise DimensionMismatch("a is not symmetric")

    diag = np.diag(a)
    if np.any(diag <= 0.0):
        raise NotPositiveDefinite("non-positive diagonal entry")
    try:
        factor, lower = linalg.cho_factor(a, lower=True, check_finite=False)
    except linalg.LinAlgError as ex:
        raise NotPositiveDefinite(str(ex)) from ex

    relative_pivots = np.diag(factor) ** 2 / diag
    if float(np.min(relative_pivots)) <= PIVOT_TOLERANCE:
        raise NotPositiveDefinite(
            f"relative pivot {float(np.min(relative_pivots)):.3e} below {PIVOT_TOLERANCE:g}"
        )
    return linalg.cho_solve((factor, lower), b_arr, check_finite=False)


def spd_inverse(a) -> np.ndarray:
    """Inverse of an SPD matrix, computed as ``solve_spd(a, I)``."""
    a = as_matrix(a, "a")
    inv = solve_spd(a, np.eye(a.shape[0]))
    # symmetrize away rounding so downstream quadratic forms stay exact-symmetric
    return 0.5 * (inv + inv.T)


def normal_quantile(p: float) -> float:
    _check_probability(p)
    return float(special.ndtri(p))


def t_cdf(x: float, df: float) -> float:
    """Student-t CDF from the regularized incomplete beta function."""
    if math.isinf(df) or df >= NORMAL_DF_THRESHOLD:
        return float(special.ndtr(x))
    tail = 0.5 * float(special.betainc(df / 2.0, 0.5, df / (df + x * x)))
    return 1.0 - tail if x > 0 else tail


def t_quantile(p: float, df: float) -> float:
    """
    p-quantile of Student's t distribution with ``df`` degrees of freedom.

    Inverts :func:`t_cdf` by Brent's method on the upper half and mirrors the
    lower half, so ``t_quantile(1 - p, df) == -t_quantile(p, df)``. For
    ``df >= 1e6`` (or infinite) the normal quantile is returned.

    Raises:
        InvalidProbability: p not in (0, 1)
        InvalidDf: df < 1
    """
    _check_probability(p)
    if math.isnan(df) or df < 1:
        raise InvalidDf(f"degrees of freedom must be >= 1, got {df}")
    if p == 0.5:
        return 0.0
    if math.isinf(df) or df >= NORMAL_DF_THRESHOLD:
        return normal_quantile(p)

    upper = p if p > 0.5 else 1.0 - p
    hi = 1.0
    while t_cdf(hi, df) < upper:
        hi *= 2.0
    root = optimize.brentq(
        lambda x: t_cdf(x, df) - upper, 0.0, hi, xtol=1e-14, rtol=1e-14, maxiter=500
    )
    return float(root) if p > 0.5 else -float(root)


def softmax(logits) -> np.ndarray:
    """Max-shifted exponential normalization; safe for large logits."""
    z = as_vector(logits, "logits")
    return special.softmax(z)


def _check_probability(p: float) -> None:
    if not (isinstance(p, (int, float, np.floating)) and 0.0 < float(p) < 1.0):
        raise InvalidProbability(f"probability must lie in (0, 1), got {p!r}")
