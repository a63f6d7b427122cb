from ._version import __version__, __version_info__
from .bnn import McBatch, McPrediction, Mlp, MlpConfig, TaskKind, forward, mc_predict, mc_predict_batch, mc_predict_proba, train
from .conformal import (
    CalibrationResult,
    ConformalInterval,
    PredictionSet,
    ScoreKind,
    calibrate,
    classification_scores,
    empirical_coverage,
    predict_interval_conformal,
    predict_set,
    regression_scores,
)
from .datasets import (
    Dataset,
    LinearConfig,
    SineConfig,
    SplitSpec,
    TargetKind,
    load_csv,
    load_iris,
    spending_scenario,
    split,
    synth_linear,
    synth_sine,
)
from .exceptions import UncertaintyError
from .forest import ForestConfig, RandomForest, VoteMode, forest_predict, forest_predict_proba, train_forest
from .infotheory import LogBase, UncertaintyDecomposition, decompose, shannon_entropy
from .linreg import OlsFit, PredictionInterval, fit_ols, predict_interval, predict_intervals
from .numerics import RandomStream, solve_spd, t_quantile
from .selective import MetricKind, RejectionCurve, rejection_curve, threshold_for_target

__all__ = [
    "CalibrationResult",
    "ConformalInterval",
    "Dataset",
    "ForestConfig",
    "LinearConfig",
    "LogBase",
    "McBatch",
    "McPrediction",
    "MetricKind",
    "Mlp",
    "MlpConfig",
    "OlsFit",
    "PredictionInterval",
    "PredictionSet",
    "RandomForest",
    "RandomStream",
    "RejectionCurve",
    "ScoreKind",
    "SineConfig",
    "SplitSpec",
    "TargetKind",
    "TaskKind",
    "UncertaintyDecomposition",
    "UncertaintyError",
    "VoteMode",
    "calibrate",
    "classification_scores",
    "decompose",
    "empirical_coverage",
    "fit_ols",
    "forest_predict",
    "forest_predict_proba",
    "forward",
    "load_csv",
    "load_iris",
    "mc_predict",
    "mc_predict_batch",
    "mc_predict_proba",
    "predict_interval",
    "predict_intervals",
    "predict_interval_conformal",
    "predict_set",
    "regression_scores",
    "rejection_curve",
    "shannon_entropy",
    "solve_spd",
    "spending_scenario",
    "split",
    "synth_linear",
    "synth_sine",
    "t_quantile",
    "threshold_for_target",
    "train",
    "train_forest",
]
