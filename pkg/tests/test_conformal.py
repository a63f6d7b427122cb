import numpy as np
import pytest

from src.uq_toolkit.conformal import (
    CalibrationResult,
    ConformalInterval,
    PredictionSet,
    ScoreKind,
    calibrate,
    classification_scores,
    conformal_rank,
    empirical_coverage,
    load_calibration,
    mean_set_size,
    predict_interval_conformal,
    predict_set,
    predict_sets,
    regression_scores,
    save_calibration,
    set_size_histogram,
)
from src.uq_toolkit.exceptions import (
    EmptyInput,
    IndexOutOfRange,
    InsufficientCalibration,
    InvalidAlpha,
    InvalidConfig,
    LengthMismatch,
)

# calibration rows as printed (they need not sum to exactly 1)
CALIBRATION_ROWS = [
    (2, [0.307, 0.498, 0.109, 0.004, 0.024, 0.031, 0.028], 0.891),
    (1, [0.286, 0.626, 0.032, 0.002, 0.015, 0.017, 0.022], 0.374),
    (0, [0.480, 0.432, 0.026, 0.002, 0.011, 0.013, 0.036], 0.520),
    (1, [0.320, 0.542, 0.052, 0.003, 0.021, 0.029, 0.029], 0.458),
    (0, [0.450, 0.441, 0.036, 0.002, 0.013, 0.018, 0.040], 0.550),
]

TEST_ROWS = [
    ([0.337, 0.529, 0.053, 0.003, 0.019, 0.028, 0.031], (1,)),
    ([0.175, 0.362, 0.269, 0.026, 0.014, 0.137, 0.016], (1,)),
    ([0.204, 0.362, 0.269, 0.026, 0.013, 0.124, 0.018], (1,)),
    ([0.435, 0.444, 0.044, 0.003, 0.014, 0.021, 0.039], (0, 1)),
    ([0.434, 0.390, 0.030, 0.002, 0.012, 0.015, 0.117], (0, 1)),
]


def _three_class_task(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    logits = rng.standard_normal((n, 3)) * 1.5
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    labels = np.array([rng.choice(3, p=p) for p in probs])
    return probs, labels


def test_rank_for_covertype_calibration_set():
    assert conformal_rank(1600, 0.2) == 1281
    assert calibrate(np.linspace(0, 1, 1600), 0.2).k == 1281


def test_calibration_scores_as_printed():
    truths = [r[0] for r in CALIBRATION_ROWS]
    probs = [r[1] for r in CALIBRATION_ROWS]
    expected = [r[2] for r in CALIBRATION_ROWS]
    assert classification_scores(probs, truths) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("test_id, index", [(f"row_{i}", i) for i in range(len(TEST_ROWS))])
def test_prediction_sets_as_printed(test_id, index):
    calibration = CalibrationResult(q_hat=0.645, alpha=0.2, n=1600, k=1281)
    probs, expected = TEST_ROWS[index]
    assert calibration.set_threshold == pytest.approx(0.355)
    assert predict_set(probs, calibration).class_indices == expected


def test_q_hat_is_kth_smallest_score():
    scores = np.array([0.9, 0.1, 0.5, 0.3, 0.7, 0.2, 0.8, 0.4, 0.6])
    result = calibrate(scores, 0.2)
    assert result.k == 8
    assert result.q_hat == 0.8


def test_duplicate_scores():
    result = calibrate([0.5] * 10, 0.1)
    assert result.q_hat == 0.5
    assert result.k == 10


@pytest.mark.parametrize("test_id, n, alpha", [("five_scores_alpha_10", 5, 0.1), ("four_scores_alpha_5", 4, 0.05)])
def test_alpha_too_small_for_calibration_size(test_id, n, alpha):
    assert conformal_rank(n, alpha) > n
    with pytest.raises(InsufficientCalibration):
        calibrate(np.linspace(0, 1, n), alpha)


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.2])
def test_invalid_alpha(alpha):
    with pytest.raises(InvalidAlpha):
        calibrate([0.1, 0.2], alpha)


def test_empty_scores():
    with pytest.raises(EmptyInput):
        calibrate([], 0.1)


def test_classification_score_errors():
    with pytest.raises(IndexOutOfRange):
        classification_scores([[0.5, 0.5]], [2])
    with pytest.raises(LengthMismatch):
        classification_scores([[0.5, 0.5]], [0, 1])


@pytest.mark.parametrize("p", [0.1, 0.3, 0.355, 0.7, 0.9])
def test_probability_tied_with_calibration_score_is_in_set(p):
    calibration = calibrate(classification_scores([[p, 1.0 - p]] * 9, [0] * 9), 0.2)
    assert 0 in predict_set([p, 1.0 - p], calibration).class_indices


def test_empty_set_and_top1_fallback():
    calibration = CalibrationResult(q_hat=0.3, alpha=0.1, n=100, k=91)
    probs = [0.4, 0.35, 0.25]
    assert len(predict_set(probs, calibration)) == 0
    assert predict_set(probs, calibration, force_top1=True).class_indices == (0,)


def test_sets_grow_as_alpha_shrinks():
    rng = np.random.default_rng(5)
    cal_probs, cal_labels = _three_class_task(rng, 500)
    test_probs, _ = _three_class_task(rng, 500)
    scores = classification_scores(cal_probs, cal_labels)
    loose = predict_sets(test_probs, calibrate(scores, 0.2))
    tight = predict_sets(test_probs, calibrate(scores, 0.1))
    assert all(set(a.class_indices) <= set(b.class_indices) for a, b in zip(loose, tight))
    assert mean_set_size(tight) >= mean_set_size(loose)


def test_set_size_histogram_counts_every_set():
    sets = [PredictionSet(()), PredictionSet((1,)), PredictionSet((0, 2)), PredictionSet((1,))]
    assert set_size_histogram(sets, 3).tolist() == [1, 2, 1, 0]
    assert mean_set_size(sets) == 1.0


def test_empirical_coverage_of_sets_and_intervals():
    sets = [PredictionSet((0,)), PredictionSet((1, 2)), PredictionSet(())]
    assert empirical_coverage(sets, [0, 2, 1]) == pytest.approx(2 / 3)
    intervals = [ConformalInterval(0.0, 1.0), ConformalInterval(2.0, 3.0)]
    assert empirical_coverage(intervals, [1.0, 1.5]) == 0.5
    with pytest.raises(LengthMismatch):
        empirical_coverage(sets, [0])


@pytest.mark.parametrize(
    "test_id, kind, q_hat, half_width",
    [
        ("absolute", ScoreKind.REGRESSION_ABSOLUTE, 0.5, 0.5),
        ("squared", ScoreKind.REGRESSION_SQUARED, 0.25, 0.5),
    ],
)
def test_regression_interval(test_id, kind, q_hat, half_width):
    calibration = CalibrationResult(q_hat=q_hat, alpha=0.1, n=50, k=46, score_kind=kind)
    interval = predict_interval_conformal(2.0, calibration)
    assert interval.lower == pytest.approx(2.0 - half_width)
    assert interval.upper == pytest.approx(2.0 + half_width)


def test_regression_scores():
    assert regression_scores([1.0, 2.0], [1.5, 0.0], "absolute") == pytest.approx([0.5, 2.0])
    assert regression_scores([1.0, 2.0], [1.5, 0.0], "squared") == pytest.approx([0.25, 4.0])
    with pytest.raises(InvalidConfig):
        regression_scores([1.0], [1.0], ScoreKind.CLASSIFICATION)


@pytest.mark.parametrize("test_id, shift", [("up", 10.0), ("down", -3.25), ("large", 1e3)])
def test_regression_scores_are_translation_invariant(test_id, shift):
    predictions = np.array([0.5, -1.0, 2.0, 4.0])
    truths = np.array([1.0, -0.25, 1.5, 3.0])
    for kind in ("absolute", "squared"):
        shifted = regression_scores(predictions + shift, truths + shift, kind)
        assert shifted == pytest.approx(regression_scores(predictions, truths, kind), abs=1e-9)


def test_kind_mismatch_is_rejected():
    with pytest.raises(InvalidConfig):
        predict_set([0.5, 0.5], CalibrationResult(0.5, 0.1, 50, 46, ScoreKind.REGRESSION_ABSOLUTE))
    with pytest.raises(InvalidConfig):
        predict_interval_conformal(1.0, CalibrationResult(0.5, 0.1, 50, 46))


def test_save_and_load(tmp_path):
    calibration = calibrate(np.linspace(0, 1, 99), 0.1, "regression-squared")
    path = tmp_path / "calibration.json"
    save_calibration(calibration, path)
    assert load_calibration(path) == calibration


@pytest.mark.slow
@pytest.mark.parametrize("alpha", [0.1, 0.2])
def test_classification_coverage_guarantee(alpha):
    rng = np.random.default_rng(int(alpha * 100))
    probs, labels = _three_class_task(rng, 2500)
    scores = classification_scores(probs, labels)
    coverages = []
    for _ in range(500):
        order = rng.permutation(2500)
        cal, test = order[:500], order[500:]
        calibration = calibrate(scores[cal], alpha)
        coverages.append(empirical_coverage(predict_sets(probs[test], calibration), labels[test]))
    lower, upper = 1 - alpha, 1 - alpha + 1 / 501
    assert lower - 0.01 <= np.mean(coverages) <= upper + 0.01


def test_regression_coverage_guarantee():
    rng = np.random.default_rng(8)
    coverages = []
    for _ in range(100):
        predictions = rng.standard_normal(1200)
        truths = predictions + rng.standard_normal(1200) * 0.5
        scores = regression_scores(predictions[:200], truths[:200])
        calibration = calibrate(scores, 0.1, ScoreKind.REGRESSION_ABSOLUTE)
        intervals = [predict_interval_conformal(p, calibration) for p in predictions[200:]]
        coverages.append(empirical_coverage(intervals, truths[200:]))
    assert np.mean(coverages) == pytest.approx(0.9, abs=0.015)


if __name__ == "__main__":
    pytest.main(["-v", __file__])
