from __future__ import annotations

import dataclasses
import logging
import math
from enum import StrEnum

import numpy as np
from scipy import special

from .const import MI_CLAMP_TOLERANCE, PROB_SUM_TOLERANCE, PROB_ZERO_FLOOR
from .exceptions import EmptyEnsemble, InvalidProbVector, LengthMismatch
from .numerics import as_prob_vector

_LOGGER = logging.getLogger(__name__)


class LogBase(StrEnum):
    """Entropy unit: bits (log₂) or nats (ln)."""

    BITS = "2"
    NATS = "e"

    @property
    def log_of_base(self) -> float:
        return math.log(2.0) if self is LogBase.BITS else 1.0

    @classmethod
    def parse(cls, value: LogBase | str | float | int) -> LogBase:
        if isinstance(value, LogBase):
            return value
        if isinstance(value, str):
            return cls(value.strip().lower())
        if value == 2:
            return cls.BITS
        if math.isclose(float(value), math.e):
            return cls.NATS
        raise ValueError(f"unsupported log base {value!r}; use 2 or 'e'")


@dataclasses.dataclass(frozen=True)
class UncertaintyDecomposition:
    """
    Entropy decomposition for one observation.

    Attributes:
        total: entropy H of the ensemble-mean distribution
        aleatoric: conditional entropy C, the mean of the member entropies
        epistemic: mutual information I = H - C
        log_base: unit of the three values
    """

    total: float
    aleatoric: float
    epistemic: float
    log_base: LogBase = LogBase.BITS

    def convert(self, log_base: LogBase | str | int) -> UncertaintyDecomposition:
        target = LogBase.parse(log_base)
        factor = self.log_base.log_of_base / target.log_of_base
        return UncertaintyDecomposition(
            total=self.total * factor,
            aleatoric=self.aleatoric * factor,
            epistemic=self.epistemic * factor,
            log_base=target,
        )


@dataclasses.dataclass(frozen=True, eq=False)
class DecompositionBatch:
    """Per-observation H, C and I arrays for a batch of ensemble predictions."""

    total: np.ndarray
    aleatoric: np.ndarray
    epistemic: np.ndarray
    log_base: LogBase = LogBase.BITS

    def __len__(self) -> int:
        return self.total.shape[0]

    def __getitem__(self, i: int) -> UncertaintyDecomposition:
        return UncertaintyDecomposition(
            total=float(self.total[i]),
            aleatoric=float(self.aleatoric[i]),
            epistemic=float(self.epistemic[i]),
            log_base=self.log_base,
        )


def _entropy_along_last(p: np.ndarray, log_base: LogBase) -> np.ndarray:
    p = np.where(p < PROB_ZERO_FLOOR, 0.0, p)
    return special.entr(p).sum(axis=-1) / log_base.log_of_base


def shannon_entropy(p, log_base: LogBase | str | int = LogBase.BITS) -> float:
    """
    Shannon entropy -Σ pᵢ log pᵢ with 0·log 0 = 0.

    Raises:
        InvalidProbVector: p is not a probability vector
    """
    base = LogBase.parse(log_base)
    return float(_entropy_along_last(as_prob_vector(p), base))


def _stack_members(member_probs) -> np.ndarray:
    members = [np.atleast_1d(np.asarray(m, dtype=np.float64)) for m in member_probs]
    if not members:
        raise EmptyEnsemble("ensemble has no members")
    lengths = {len(m) for m in members}
    if len(lengths) != 1:
        raise LengthMismatch(f"member probability vectors differ in length: {sorted(lengths)}")
    return np.vstack([as_prob_vector(m, f"member {i}") for i, m in enumerate(members)])


def _clamp_mutual_information(total, aleatoric):
    mi = total - aleatoric
    worst = float(np.min(mi)) if np.ndim(mi) else float(mi)
    if worst < -MI_CLAMP_TOLERANCE:
        _LOGGER.warning("Mutual information %.3g below zero beyond tolerance; clamping", worst)
    return np.maximum(mi, 0.0)


def decompose(member_probs, log_base: LogBase | str | int = LogBase.BITS) -> UncertaintyDecomposition:
    """
    Split ensemble uncertainty into aleatoric and epistemic parts.

    Args:
        member_probs: one probability vector per ensemble member
        log_base: 2 (default) or 'e'

    Returns:
        UncertaintyDecomposition: H of the mean vector, mean member entropy C,
        and I = H - C clamped at 0.

    Raises:
        EmptyEnsemble: no members
        LengthMismatch: members disagree on the number of classes
    """
    base = LogBase.parse(log_base)
    probs = _stack_members(member_probs)
    total = float(_entropy_along_last(probs.mean(axis=0), base))
    aleatoric = float(_entropy_along_last(probs, base).mean())
    epistemic = float(_clamp_mutual_information(total, aleatoric))
    return UncertaintyDecomposition(total=total, aleatoric=aleatoric, epistemic=epistemic, log_base=base)


def decompose_batch(member_probs, log_base: LogBase | str | int = LogBase.BITS) -> DecompositionBatch:
    """
    Vectorized :func:`decompose`.

    Args:
        member_probs: array of shape (members, n, classes)
    """
    base = LogBase.parse(log_base)
    probs = np.asarray(member_probs, dtype=np.float64)
    if probs.ndim != 3:
        raise LengthMismatch(f"expected (members, n, classes), got shape {probs.shape}")
    if probs.shape[0] == 0:
        raise EmptyEnsemble("ensemble has no members")
    if np.any(~np.isfinite(probs)) or np.any(probs < 0.0) or np.any(probs > 1.0):
        raise InvalidProbVector("member probabilities must be finite and lie in [0, 1]")
    if np.any(np.abs(probs.sum(axis=-1) - 1.0) > PROB_SUM_TOLERANCE):
        raise InvalidProbVector("member probability vectors must sum to 1")

    total = _entropy_along_last(probs.mean(axis=0), base)
    aleatoric = _entropy_along_last(probs, base).mean(axis=0)
    return DecompositionBatch(
        total=total,
        aleatoric=aleatoric,
        epistemic=_clamp_mutual_information(total, aleatoric),
        log_base=base,
    )
