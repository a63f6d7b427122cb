from __future__ import annotations

import dataclasses
import logging
import math
from enum import StrEnum
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from .const import (
    COVERTYPE_TARGET,
    CSV_FLOAT_FORMAT,
    DEFAULT_SEED,
    IRIS_TARGET,
    STREAM_SPLIT,
    STREAM_SUBSAMPLE,
    STREAM_SYNTH,
)
from .exceptions import (
    DimensionMismatch,
    InfeasibleSplit,
    InvalidConfig,
    InvalidDomain,
    MissingColumn,
    NonNumericCell,
    ParseError,
)
from .numerics import RandomStream, as_matrix

_LOGGER = logging.getLogger(__name__)


class TargetKind(StrEnum):
    CLASSIFICATION = "classification"
    REGRESSION = "regression"


@dataclasses.dataclass(frozen=True, eq=False)
class Dataset:
    """
    Feature matrix with aligned targets.

    Attributes:
        features: n×k float64 matrix
        targets: class codes 0..C-1 (classification) or real values (regression)
        feature_names: one name per feature column
        target_kind: classification or regression
        target_name: name of the target column
        class_labels: original label of each class code, classification only
    """

    features: np.ndarray
    targets: np.ndarray
    feature_names: tuple[str, ...]
    target_kind: TargetKind = TargetKind.REGRESSION
    target_name: str = "target"
    class_labels: tuple[Any, ...] | None = None

    def __post_init__(self) -> None:
        if self.features.shape[0] != self.targets.shape[0]:
            raise DimensionMismatch(
                f"{self.features.shape[0]} feature rows but {self.targets.shape[0]} targets"
            )
        if len(self.feature_names) != self.features.shape[1]:
            raise DimensionMismatch(
                f"{len(self.feature_names)} feature names for {self.features.shape[1]} columns"
            )

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def k(self) -> int:
        return self.features.shape[1]

    @cached_property
    def n_classes(self) -> int:
        if self.target_kind is not TargetKind.CLASSIFICATION:
            return 0
        if self.class_labels is not None:
            return len(self.class_labels)
        return int(self.targets.max()) + 1 if self.n else 0

    def take(self, rows) -> Dataset:
        rows = np.asarray(rows, dtype=np.int64)
        return dataclasses.replace(self, features=self.features[rows], targets=self.targets[rows])

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.features, columns=list(self.feature_names))
        if self.target_kind is TargetKind.CLASSIFICATION and self.class_labels is not None:
            frame[self.target_name] = [self.class_labels[c] for c in self.targets]
        else:
            frame[self.target_name] = self.targets
        return frame


def _numeric_column(raw: pd.Series, column: str) -> np.ndarray:
    values = pd.to_numeric(raw, errors="coerce")
    bad = values.isna()
    if bad.any():
        row = int(np.argmax(bad.to_numpy()))
        raise NonNumericCell(f"cannot parse {raw.iloc[row]!r} as a number", row=row + 1, column=column)
    return values.to_numpy(dtype=np.float64)


def _encode_labels(raw: pd.Series) -> tuple[np.ndarray, tuple[Any, ...]]:
    numeric = pd.to_numeric(raw, errors="coerce")
    if not numeric.isna().any():
        as_float = numeric.to_numpy(dtype=np.float64)
        labels = np.unique(as_float)
        originals = tuple(int(v) if float(v).is_integer() else float(v) for v in labels)
        return np.searchsorted(labels, as_float).astype(np.int64), originals
    labels = sorted(raw.unique())
    lookup = {label: code for code, label in enumerate(labels)}
    return raw.map(lookup).to_numpy(dtype=np.int64), tuple(labels)


def load_csv(path: str | Path, target_column: str, target_kind: TargetKind | str) -> Dataset:
    """
    Read a comma-separated file with a header row into a Dataset.

    Every column other than ``target_column`` must be numeric. Classification
    labels are re-coded to contiguous integers 0..C-1 in sorted label order
    (so covertype's 1..7 become 0..6); the originals are kept in
    ``class_labels``. Row order is preserved.

    Raises:
        ParseError: empty file, malformed or short rows (row/column reported)
        MissingColumn: ``target_column`` absent from the header
        NonNumericCell: a feature (or regression target) cell is not a number
    """
    kind = TargetKind(target_kind)
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True, encoding="utf-8")
    except pd.errors.EmptyDataError as ex:
        raise ParseError(f"{path} is empty") from ex
    except pd.errors.ParserError as ex:
        raise ParseError(f"{path}: {ex}") from ex
    if raw.shape[0] == 0:
        raise ParseError(f"{path} has a header but no data rows")
    missing = raw.isna()
    if missing.to_numpy().any():
        row, col = map(int, np.argwhere(missing.to_numpy())[0])
        raise ParseError("row has too few fields", row=row + 1, column=str(raw.columns[col]))
    if target_column not in raw.columns:
        raise MissingColumn(f"target column {target_column!r} not found in {list(raw.columns)}")

    feature_names = tuple(str(c) for c in raw.columns if c != target_column)
    features = np.column_stack([_numeric_column(raw[c], c) for c in feature_names]) if feature_names else np.empty((raw.shape[0], 0))
    if kind is TargetKind.CLASSIFICATION:
        targets, class_labels = _encode_labels(raw[target_column])
    else:
        targets, class_labels = _numeric_column(raw[target_column], target_column), None

    ds = Dataset(
        features=as_matrix(features, "features") if features.size else features.astype(np.float64),
        targets=targets,
        feature_names=feature_names,
        target_kind=kind,
        target_name=target_column,
        class_labels=class_labels,
    )
    _LOGGER.info("Loaded %s: n=%d k=%d target=%s (%s)", path, ds.n, ds.k, target_column, kind.value)
    return ds


def to_csv(ds: Dataset, path: str | Path) -> None:
    """Write a Dataset with 17 significant digits so reloading is exact."""
    ds.to_frame().to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")


@dataclasses.dataclass(frozen=True)
class SplitSpec:
    """
    Partition sizes for :func:`split`.

    Attributes:
        sizes: absolute row counts summing to n, or fractions summing to 1
        master_seed: seed of the shuffling permutation
    """

    sizes: tuple[float, ...]
    master_seed: int = DEFAULT_SEED

    def counts(self, n: int) -> list[int]:
        sizes = list(self.sizes)
        if not sizes or any(s < 0 for s in sizes):
            raise InfeasibleSplit(f"partition sizes must be non-negative, got {sizes}")
        if all(float(s).is_integer() for s in sizes) and sum(sizes) > 1:
            counts = [int(s) for s in sizes]
            if sum(counts) != n:
                raise InfeasibleSplit(f"partition counts {counts} sum to {sum(counts)}, dataset has {n} rows")
            return counts
        if not math.isclose(sum(sizes), 1.0, abs_tol=1e-9):
            raise InfeasibleSplit(f"partition fractions {sizes} do not sum to 1")
        counts = [math.floor(s * n) for s in sizes[:-1]]
        counts.append(n - sum(counts))
        return counts


def split(ds: Dataset, spec: SplitSpec) -> list[Dataset]:
    """
    Shuffle rows with a seed-derived permutation and cut it into partitions.

    Raises:
        InfeasibleSplit: sizes do not add up to the dataset
    """
    counts = spec.counts(ds.n)
    order = RandomStream(spec.master_seed, STREAM_SPLIT).generator().permutation(ds.n)
    bounds = np.cumsum([0, *counts])
    parts = [ds.take(order[bounds[i] : bounds[i + 1]]) for i in range(len(counts))]
    _LOGGER.debug("Split %d rows into %s", ds.n, counts)
    return parts


def subsample(ds: Dataset, n: int, master_seed: int = DEFAULT_SEED) -> Dataset:
    """Random subset of n rows (without replacement)."""
    if not 0 < n <= ds.n:
        raise InfeasibleSplit(f"cannot draw {n} rows from {ds.n}")
    order = RandomStream(master_seed, STREAM_SUBSAMPLE).generator().permutation(ds.n)
    return ds.take(order[:n])


def _config_from_dict(cls, data: dict[str, Any]):
    unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
    if unknown:
        raise InvalidConfig(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    converted = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    return cls(**converted)


@dataclasses.dataclass(frozen=True)
class SineConfig:
    """
    Sinusoidal regression benchmark.

    Training x is uniform on ``train_domain``, test x on ``test_domain``;
    y = amplitude·sin(x) plus N(0, noise_sigma²) noise inside ``noisy_interval``.
    """

    n_train: int = 200
    n_test: int = 100
    train_domain: tuple[float, float] = (-4.0, 4.0)
    test_domain: tuple[float, float] = (-6.0, 6.0)
    noisy_interval: tuple[float, float] = (0.0, 6.0)
    noise_sigma: float = 0.3
    amplitude: float = 1.0
    master_seed: int = DEFAULT_SEED

    from_dict = classmethod(_config_from_dict)


@dataclasses.dataclass(frozen=True)
class LinearConfig:
    """
    Linear benchmark y = [1|X]β + ε with a Gaussian design.

    With ``heteroscedastic`` the noise scale grows linearly with the first
    feature from 0 to 2·noise_sigma across its observed range.
    """

    n: int = 100
    beta: tuple[float, ...] = (1.0, 2.0)
    noise_sigma: float = 1.0
    heteroscedastic: bool = False
    master_seed: int = DEFAULT_SEED
    k: int | None = None
    design_mean: float = 0.0
    design_scale: float = 1.0

    from_dict = classmethod(_config_from_dict)


def _sine_partition(rng: np.random.Generator, n: int, domain, config: SineConfig) -> Dataset:
    lo, hi = domain
    x = rng.uniform(lo, hi, size=n)
    z = rng.standard_normal(n)
    noisy_lo, noisy_hi = config.noisy_interval
    noisy = (x >= noisy_lo) & (x <= noisy_hi)
    y = config.amplitude * np.sin(x) + np.where(noisy, config.noise_sigma * z, 0.0)
    return Dataset(features=x[:, None], targets=y, feature_names=("x",), target_name="y")


def synth_sine(config: SineConfig | None = None) -> tuple[Dataset, Dataset]:
    """
    Training and test sets for the MC-dropout experiment.

    Raises:
        InvalidDomain: an interval is empty or reversed, or noise_sigma < 0
    """
    config = config or SineConfig()
    for name in ("train_domain", "test_domain", "noisy_interval"):
        lo, hi = getattr(config, name)
        if not lo < hi:
            raise InvalidDomain(f"{name} must satisfy lo < hi, got {(lo, hi)}")
    if config.noise_sigma < 0:
        raise InvalidDomain("noise_sigma must be non-negative")
    if config.n_train < 1 or config.n_test < 1:
        raise InvalidConfig("n_train and n_test must be positive")
    stream = RandomStream(config.master_seed, STREAM_SYNTH)
    train = _sine_partition(stream.child(0).generator(), config.n_train, config.train_domain, config)
    test = _sine_partition(stream.child(1).generator(), config.n_test, config.test_domain, config)
    return train, test


def synth_linear(config: LinearConfig | None = None) -> Dataset:
    """
    Raises:
        InvalidConfig: k disagrees with len(beta) - 1, n too small, or noise_sigma < 0
    """
    config = config or LinearConfig()
    k = len(config.beta) - 1
    if config.k is not None and config.k != k:
        raise InvalidConfig(f"k={config.k} but beta has {len(config.beta)} entries")
    if k < 1 or config.n < 1 or config.noise_sigma < 0:
        raise InvalidConfig("need len(beta) >= 2, n >= 1 and noise_sigma >= 0")

    rng = RandomStream(config.master_seed, STREAM_SYNTH).child(2).generator()
    x = config.design_mean + config.design_scale * rng.standard_normal((config.n, k))
    z = rng.standard_normal(config.n)
    beta = np.asarray(config.beta, dtype=np.float64)
    scale = np.full(config.n, config.noise_sigma)
    if config.heteroscedastic:
        first = x[:, 0]
        spread = np.ptp(first)
        if spread > 0:
            scale = 2.0 * config.noise_sigma * (first - first.min()) / spread
    y = beta[0] + x @ beta[1:] + scale * z
    return Dataset(
        features=x,
        targets=y,
        feature_names=tuple(f"x{i + 1}" for i in range(k)),
        target_name="y",
    )


SPENDING_SCENARIOS = ("base", "few-obs", "noisy", "heteroscedastic", "extrapolation")
SPENDING_BETA = (2.0, 0.1)
SPENDING_INCOME_CAP = 150.0


def spending_scenario(name: str, master_seed: int = DEFAULT_SEED) -> tuple[Dataset, Dataset | None]:
    """
    Luxury-spending vs income data (both in k€) for the OLS walkthrough.

    Returns:
        (training data, held-out extrapolation points or None). Only the
        ``extrapolation`` scenario has held-out points: incomes above the cap,
        where true spending stops growing.
    """
    if name not in SPENDING_SCENARIOS:
        raise InvalidConfig(f"unknown scenario {name!r}; choose from {SPENDING_SCENARIOS}")
    params = dict(
        n=15,
        beta=SPENDING_BETA,
        noise_sigma=1.5,
        master_seed=master_seed,
        design_mean=80.0,
        design_scale=20.0,
    )
    if name == "few-obs":
        params["n"] = 5
    elif name == "noisy":
        params["noise_sigma"] = 4.5
    elif name == "heteroscedastic":
        params.update(n=60, heteroscedastic=True)
    train = synth_linear(LinearConfig(**params))
    train = dataclasses.replace(train, feature_names=("income",), target_name="spending")
    if name != "extrapolation":
        return train, None

    rng = RandomStream(master_seed, STREAM_SYNTH).child(3).generator()
    income = np.linspace(180.0, 300.0, 9)
    spending = SPENDING_BETA[0] + SPENDING_BETA[1] * SPENDING_INCOME_CAP + 1.5 * rng.standard_normal(income.size)
    holdout = Dataset(
        features=income[:, None], targets=spending, feature_names=("income",), target_name="spending"
    )
    return train, holdout


def load_iris() -> Dataset:
    """The 150-flower Iris data bundled with scikit-learn (no network)."""
    from sklearn import datasets as sk_datasets

    bunch = sk_datasets.load_iris()
    return Dataset(
        features=as_matrix(bunch.data, "iris"),
        targets=np.asarray(bunch.target, dtype=np.int64),
        feature_names=tuple(bunch.feature_names),
        target_kind=TargetKind.CLASSIFICATION,
        target_name=IRIS_TARGET,
        class_labels=tuple(str(t) for t in bunch.target_names),
    )


def fetch_covertype(path: str | Path, data_home: str | Path | None = None) -> Path:
    """
    Download the UCI covertype data via scikit-learn and write it as CSV.

    Labels are written as published (1..7); :func:`load_csv` re-codes them.
    """
    from sklearn import datasets as sk_datasets

    bunch = sk_datasets.fetch_covtype(data_home=data_home, as_frame=True)
    frame = bunch.frame
    frame[COVERTYPE_TARGET] = frame[COVERTYPE_TARGET].astype(np.int64)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    _LOGGER.info("Wrote covertype (%d rows) to %s", frame.shape[0], path)
    return path
