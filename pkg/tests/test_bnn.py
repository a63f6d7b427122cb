import dataclasses
import math

import numpy as np
import pytest

from src.uq_toolkit.bnn import (
    Mlp,
    MlpConfig,
    TaskKind,
    attenuated_loss,
    forward,
    init_mlp,
    load_mlp,
    loss_and_gradients,
    mc_predict,
    mc_predict_batch,
    mc_predict_proba,
    save_mlp,
    train,
    training_log_frame,
    training_loss,
)
from src.uq_toolkit.datasets import SineConfig, synth_sine
from src.uq_toolkit.exceptions import InvalidConfig, InvalidT, LengthMismatch, ShapeMismatch
from src.uq_toolkit.infotheory import decompose_batch
from src.uq_toolkit.selective import rejection_curve

FD_STEP = 1e-5
FD_TOLERANCE = 1e-4


def _random_net(rng: np.random.Generator, sizes: tuple[int, ...], task=TaskKind.REGRESSION) -> Mlp:
    weights = [rng.standard_normal((a, b)) * 0.8 for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [rng.standard_normal(b) * 0.3 for b in sizes[1:]]
    return Mlp(weights=weights, biases=biases, task=task)


def _finite_difference_errors(net: Mlp, x, y, l2_weight: float) -> list[float]:
    _, grads = loss_and_gradients(net, x, y, l2_weight)
    errors = []
    for params, analytic in ((net.weights, [g[0] for g in grads]), (net.biases, [g[1] for g in grads])):
        for p, g in zip(params, analytic):
            for idx in np.ndindex(p.shape):
                original = p[idx]
                p[idx] = original + FD_STEP
                up = training_loss(net, x, y, l2_weight)
                p[idx] = original - FD_STEP
                down = training_loss(net, x, y, l2_weight)
                p[idx] = original
                numeric = (up - down) / (2 * FD_STEP)
                scale = max(abs(numeric), abs(g[idx]), 1e-6)
                errors.append(abs(numeric - g[idx]) / scale)
    return errors


@pytest.fixture
def tiny_config():
    return MlpConfig(layer_sizes=(1, 8, 2), dropout_rate=0.2, epochs=5, batch_size=8, mc_passes=10, master_seed=3)


def test_gradients_of_two_two_two_net():
    rng = np.random.default_rng(0)
    net = _random_net(rng, (2, 2, 2))
    x = rng.standard_normal((6, 2))
    y = rng.standard_normal(6)
    assert max(_finite_difference_errors(net, x, y, 1e-3)) < FD_TOLERANCE


@pytest.mark.parametrize("test_id, task", [("regression", TaskKind.REGRESSION), ("classification", TaskKind.CLASSIFICATION)])
def test_gradients_of_random_small_nets(test_id, task):
    rng = np.random.default_rng(42)
    for _ in range(20):
        k = int(rng.integers(1, 4))
        hidden = tuple(int(h) for h in rng.integers(2, 6, size=rng.integers(1, 3)))
        outputs = 2 if task is TaskKind.REGRESSION else int(rng.integers(2, 5))
        net = _random_net(rng, (k, *hidden, outputs), task)
        x = rng.standard_normal((7, k))
        y = rng.standard_normal(7) if task is TaskKind.REGRESSION else rng.integers(0, outputs, 7)
        assert max(_finite_difference_errors(net, x, y, 1e-4)) < FD_TOLERANCE


def test_attenuated_loss_hand_value(tiny_config):
    net = init_mlp(tiny_config)
    assert attenuated_loss([(0.0, math.log(4.0))], [1.0], 0.0, net) == pytest.approx(0.125 + 0.5 * math.log(4.0))
    assert attenuated_loss([(0.0, math.log(4.0))], [1.0], 0.0, net) == pytest.approx(0.8181, abs=1e-4)


def test_attenuated_loss_at_unit_variance_is_half_mse(tiny_config):
    net = init_mlp(tiny_config)
    assert attenuated_loss([(1.0, 0.0), (2.0, 0.0)], [0.0, 0.0], 0.0, net) == pytest.approx(1.25)


def test_attenuated_loss_minimized_at_squared_residual(tiny_config):
    net = init_mlp(tiny_config)
    residual = 0.7
    grid = np.linspace(-4.0, 2.0, 6001)
    losses = [attenuated_loss([(0.0, s)], [residual], 0.0, net) for s in grid]
    assert math.exp(grid[int(np.argmin(losses))]) == pytest.approx(residual**2, rel=1e-3)


def test_attenuated_loss_adds_l2_penalty(tiny_config):
    net = init_mlp(tiny_config)
    penalty = sum(float(np.sum(w * w)) for w in net.weights)
    plain = attenuated_loss([(0.0, 0.0)], [1.0], 0.0, net)
    assert attenuated_loss([(0.0, 0.0)], [1.0], 0.01, net) == pytest.approx(plain + 0.01 * penalty)


def test_attenuated_loss_length_mismatch(tiny_config):
    with pytest.raises(LengthMismatch):
        attenuated_loss([(0.0, 0.0)], [1.0, 2.0], 0.0, init_mlp(tiny_config))


def test_zero_network_outputs_zero():
    net = Mlp(weights=[np.zeros((3, 4)), np.zeros((4, 2))], biases=[np.zeros(4), np.zeros(2)])
    assert forward(net, [1.0, -2.0, 0.5]) == (0.0, 0.0)


@pytest.mark.parametrize("test_id, x, expected", [("active_unit", 1.0, (3.1, 0.3)), ("dead_unit", 0.0, (0.1, -0.2))])
def test_single_hidden_unit_forward(test_id, x, expected):
    net = Mlp(
        weights=[np.array([[2.0]]), np.array([[3.0, 0.5]])],
        biases=[np.array([-1.0]), np.array([0.1, -0.2])],
    )
    assert forward(net, [x]) == pytest.approx(expected)


def test_dropout_free_forward_is_deterministic(tiny_config):
    net = init_mlp(tiny_config)
    rng = np.random.default_rng(0)
    assert forward(net, [0.3]) == forward(net, [0.3], dropout_rate=0.0, rng=rng) == forward(net, [0.3])


def test_forward_rejects_wrong_feature_count(tiny_config):
    with pytest.raises(ShapeMismatch):
        forward(init_mlp(tiny_config), [1.0, 2.0])


def test_mismatched_layers_are_rejected():
    with pytest.raises(ShapeMismatch):
        Mlp(weights=[np.zeros((1, 3)), np.zeros((4, 2))], biases=[np.zeros(3), np.zeros(2)])


def test_dropout_zero_has_exactly_zero_epistemic_variance(tiny_config):
    config = dataclasses.replace(tiny_config, dropout_rate=0.0)
    net = init_mlp(config)
    batch = mc_predict_batch(net, np.linspace(-3, 3, 25)[:, None], config)
    assert np.all(batch.epistemic_var == 0.0)
    assert np.all(batch.aleatoric_var > 0.0)


def test_mc_prediction_with_dropout(tiny_config):
    net = init_mlp(tiny_config)
    prediction = mc_predict(net, [0.5], tiny_config)
    assert len(prediction.samples) == tiny_config.mc_passes
    assert prediction.mean == pytest.approx(np.mean([m for m, _ in prediction.samples]))
    assert prediction.epistemic_var == pytest.approx(np.var([m for m, _ in prediction.samples]))
    assert prediction.total_var == pytest.approx(prediction.epistemic_var + prediction.aleatoric_var)


def test_mc_prediction_is_reproducible_across_workers(tiny_config):
    net = init_mlp(tiny_config)
    x = np.linspace(-2, 2, 11)[:, None]
    serial = mc_predict_batch(net, x, tiny_config)
    parallel = mc_predict_batch(net, x, dataclasses.replace(tiny_config, n_jobs=3))
    assert np.array_equal(serial.samples, parallel.samples)
    other = mc_predict_batch(net, x, dataclasses.replace(tiny_config, master_seed=4))
    assert not np.array_equal(serial.samples, other.samples)


def test_single_pass_is_rejected(tiny_config):
    with pytest.raises(InvalidT):
        mc_predict(init_mlp(tiny_config), [0.0], dataclasses.replace(tiny_config, mc_passes=1))


@pytest.mark.parametrize(
    "test_id, kwargs",
    [
        ("regression_needs_two_outputs", {"layer_sizes": (1, 4, 3)}),
        ("dropout_of_one", {"dropout_rate": 1.0}),
        ("binary_classifier_with_one_output", {"layer_sizes": (1, 4, 1), "task": "classification"}),
        ("zero_batch", {"batch_size": 0}),
    ],
)
def test_invalid_config(test_id, kwargs):
    with pytest.raises(InvalidConfig):
        MlpConfig(**kwargs)


def test_config_from_dict_rejects_unknown_keys():
    with pytest.raises(InvalidConfig):
        MlpConfig.from_dict({"hidden": [10]})


def test_batch_larger_than_training_set(tiny_config):
    with pytest.raises(InvalidConfig):
        train(np.zeros((4, 1)), np.zeros(4), tiny_config)


def test_training_reaches_constant_target():
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, size=(64, 1))
    config = MlpConfig(layer_sizes=(1, 16, 2), dropout_rate=0.0, epochs=200, batch_size=16, master_seed=1)
    net = train(x, np.full(64, 2.0), config)
    assert forward(net, [0.0])[0] == pytest.approx(2.0, abs=0.1)


def test_noise_free_line_learns_small_variance():
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, size=(128, 1))
    config = MlpConfig(layer_sizes=(1, 32, 32, 2), dropout_rate=0.0, epochs=300, batch_size=32, master_seed=2)
    net = train(x, 3.0 * x[:, 0], config)
    variances = [math.exp(forward(net, row)[1]) for row in x]
    assert np.mean(variances) <= 0.05


def test_returned_network_has_lowest_recorded_loss():
    rng = np.random.default_rng(3)
    x = rng.uniform(-2, 2, size=(40, 1))
    y = np.sin(x[:, 0]) + 0.1 * rng.standard_normal(40)
    config = MlpConfig(layer_sizes=(1, 16, 2), epochs=30, batch_size=10, master_seed=3)
    net = train(x, y, config)
    history = net.loss_history
    assert len(history) == config.epochs + 1
    assert min(history) <= history[0]
    assert training_loss(net, x, y, config.l2_weight) == pytest.approx(min(history))
    assert training_log_frame(net)["epoch"].tolist() == list(range(config.epochs + 1))


def test_training_is_reproducible():
    rng = np.random.default_rng(4)
    x = rng.uniform(-2, 2, size=(32, 1))
    y = x[:, 0] ** 2
    config = MlpConfig(layer_sizes=(1, 8, 2), epochs=10, batch_size=8, master_seed=11)
    first, second = train(x, y, config), train(x, y, config)
    for a, b in zip(first.weights, second.weights):
        assert np.array_equal(a, b)


def test_classification_network_and_decomposition():
    rng = np.random.default_rng(5)
    centers = np.array([[-2.0, 0.0], [2.0, 0.0], [0.0, 2.5]])
    labels = np.repeat(np.arange(3), 30)
    x = centers[labels] + 0.5 * rng.standard_normal((90, 2))
    config = MlpConfig(
        layer_sizes=(2, 16, 3), task="classification", dropout_rate=0.2, epochs=60, batch_size=15, mc_passes=20, master_seed=5
    )
    net = train(x, labels, config)
    p = forward(net, x[0])
    assert p.sum() == pytest.approx(1.0)
    probs = mc_predict_proba(net, x, config)
    assert probs.shape == (20, 90, 3)
    assert np.allclose(probs.sum(axis=-1), 1.0)
    assert np.mean(probs.mean(axis=0).argmax(axis=1) == labels) > 0.9
    assert mc_predict_proba(net, x[0], config).shape == (20, 3)
    decomposition = decompose_batch(probs)
    assert np.all(decomposition.epistemic >= 0.0)
    with pytest.raises(InvalidConfig):
        mc_predict(net, x[0], config)


def test_save_and_load(tmp_path, tiny_config):
    net = init_mlp(tiny_config)
    path = tmp_path / "model.json"
    save_mlp(net, path)
    loaded = load_mlp(path)
    assert loaded.layer_sizes == net.layer_sizes
    assert forward(loaded, [0.7]) == forward(net, [0.7])


@pytest.mark.slow
def test_sine_uncertainty_orderings():
    held = {"epistemic": 0, "aleatoric": 0, "rejection": 0}
    for seed in range(5):
        sine = SineConfig(master_seed=seed)
        train_ds, test_ds = synth_sine(sine)
        config = MlpConfig(master_seed=seed)
        net = train(train_ds.features, train_ds.targets, config)
        batch = mc_predict_batch(net, test_ds.features, config)
        x = test_ds.features[:, 0]
        inside = (x >= -4.0) & (x <= 4.0)
        held["epistemic"] += int(batch.epistemic_var[~inside].mean() > batch.epistemic_var[inside].mean())
        noisy = (x > 0.0) & (x < 4.0)
        quiet = (x > -4.0) & (x < 0.0)
        held["aleatoric"] += int(batch.aleatoric_var[noisy].mean() > batch.aleatoric_var[quiet].mean())
        curve = rejection_curve(batch.total_var, batch.mean, test_ds.targets, "rmse")
        held["rejection"] += int(curve.metric_at(0.5) < curve.metrics[0])
    assert all(count >= 4 for count in held.values()), held


if __name__ == "__main__":
    pytest.main(["-v", __file__])
