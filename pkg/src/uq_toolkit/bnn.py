from __future__ import annotations

import dataclasses
import json
import logging
import math
from enum import StrEnum
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import special

from .const import (
    CSV_FLOAT_FORMAT,
    DEFAULT_HIDDEN,
    DEFAULT_MC_PASSES,
    DEFAULT_SEED,
    STREAM_BNN_EPOCH,
    STREAM_BNN_INIT,
    STREAM_BNN_MC,
)
from .exceptions import (
    DivergedTraining,
    EmptyInput,
    InvalidConfig,
    InvalidT,
    LengthMismatch,
    ShapeMismatch,
)
from .numerics import RandomStream, as_matrix, as_vector

_LOGGER = logging.getLogger(__name__)

MLP_FORMAT = "uq_toolkit.mlp"
MLP_FORMAT_VERSION = 1


class TaskKind(StrEnum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


@dataclasses.dataclass(frozen=True)
class MlpConfig:
    """
    Architecture and optimizer settings.

    Attributes:
        layer_sizes: (inputs, hidden..., outputs). Regression needs 2 outputs
            (mean and log-variance heads); classification one per class.
        dropout_rate: probability of dropping a hidden unit, in [0, 1)
        l2_weight: coefficient of the Σw² penalty
        learning_rate: SGD step size
        epochs: passes over the training data
        batch_size: minibatch size
        mc_passes: dropout-active forward passes per MC prediction
        master_seed: seeds initialization, shuffling and MC masks
        momentum: SGD momentum in [0, 1)
        grad_clip: global gradient-norm cap, None to disable
        task: regression or classification
        n_jobs: joblib workers for the MC passes
    """

    layer_sizes: tuple[int, ...] = (1, *DEFAULT_HIDDEN, 2)
    dropout_rate: float = 0.1
    l2_weight: float = 1e-4
    learning_rate: float = 0.01
    epochs: int = 300
    batch_size: int = 32
    mc_passes: int = DEFAULT_MC_PASSES
    master_seed: int = DEFAULT_SEED
    momentum: float = 0.9
    grad_clip: float | None = 5.0
    task: TaskKind = TaskKind.REGRESSION
    n_jobs: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        object.__setattr__(self, "task", TaskKind(self.task))
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise InvalidConfig(f"layer_sizes must list at least input and output widths, got {self.layer_sizes}")
        if self.task is TaskKind.REGRESSION and self.layer_sizes[-1] != 2:
            raise InvalidConfig("regression output layer must have width 2 (mean, log variance)")
        if self.task is TaskKind.CLASSIFICATION and self.layer_sizes[-1] < 2:
            raise InvalidConfig("classification output layer needs one unit per class (>= 2)")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidConfig(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.l2_weight < 0 or self.learning_rate <= 0:
            raise InvalidConfig("l2_weight must be >= 0 and learning_rate > 0")
        if self.epochs < 0 or self.batch_size < 1 or self.mc_passes < 1:
            raise InvalidConfig("epochs >= 0, batch_size >= 1 and mc_passes >= 1 are required")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidConfig(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise InvalidConfig("grad_clip must be positive or None")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> MlpConfig:
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise InvalidConfig(f"unknown MlpConfig keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        data = dataclasses.asdict(self)
        data["layer_sizes"] = list(self.layer_sizes)
        data["task"] = self.task.value
        return data


@dataclasses.dataclass(eq=False)
class Mlp:
    """
    Network parameters; weights[l] has shape (fan_in, fan_out).

    Attributes:
        weights: one matrix per layer
        biases: one vector per layer
        task: regression (mean, log σ² outputs) or classification (logits)
        loss_history: dropout-off training loss, index 0 before the first epoch
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    task: TaskKind = TaskKind.REGRESSION
    loss_history: list[float] = dataclasses.field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeMismatch("need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeMismatch(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeMismatch(f"layer {i} expects {w.shape[0]} inputs, previous layer gives {self.weights[i - 1].shape[1]}")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0], *(w.shape[1] for w in self.weights))

    @property
    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> Mlp:
        return Mlp(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            task=self.task,
            loss_history=list(self.loss_history),
        )


@dataclasses.dataclass(frozen=True)
class McPrediction:
    """
    Monte Carlo dropout prediction for one input.

    Attributes:
        mean: average of the T mean-head outputs
        epistemic_var: population variance of those outputs
        aleatoric_var: average predicted σ²
        samples: the T (mean, σ²) pairs in pass order
    """

    mean: float
    epistemic_var: float
    aleatoric_var: float
    samples: tuple[tuple[float, float], ...] = ()

    @property
    def total_var(self) -> float:
        return self.epistemic_var + self.aleatoric_var


@dataclasses.dataclass(frozen=True, eq=False)
class McBatch:
    """Per-input MC statistics; ``samples`` has shape (T, n, 2) holding (mean, σ²)."""

    mean: np.ndarray
    epistemic_var: np.ndarray
    aleatoric_var: np.ndarray
    samples: np.ndarray

    @cached_property
    def total_var(self) -> np.ndarray:
        return self.epistemic_var + self.aleatoric_var

    def __len__(self) -> int:
        return self.mean.shape[0]

    def __getitem__(self, i: int) -> McPrediction:
        return McPrediction(
            mean=float(self.mean[i]),
            epistemic_var=float(self.epistemic_var[i]),
            aleatoric_var=float(self.aleatoric_var[i]),
            samples=tuple((float(m), float(v)) for m, v in self.samples[:, i, :]),
        )


def init_mlp(config: MlpConfig) -> Mlp:
    """He-normal weights and zero biases drawn from the initialization stream."""
    rng = RandomStream(config.master_seed, STREAM_BNN_INIT).generator()
    sizes = config.layer_sizes
    weights = [rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in) for fan_in, fan_out in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(fan_out) for fan_out in sizes[1:]]
    return Mlp(weights=weights, biases=biases, task=config.task)


def _as_generator(rng: RandomStream | np.random.Generator | None) -> np.random.Generator | None:
    if isinstance(rng, RandomStream):
        return rng.generator()
    return rng


def _forward_batch(net: Mlp, x: np.ndarray, dropout_rate: float, rng: np.random.Generator | None):
    """Outputs for every row of x plus the activations backprop needs."""
    keep = 1.0 - dropout_rate
    masked = rng is not None and dropout_rate > 0.0
    activations = [x]
    pre_activations = []
    masks = []
    h = x
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = h @ w + b
        h = np.maximum(z, 0.0)
        mask = (rng.random(z.shape) < keep) / keep if masked else None
        if mask is not None:
            h = h * mask
        pre_activations.append(z)
        masks.append(mask)
        activations.append(h)
    out = h @ net.weights[-1] + net.biases[-1]
    return out, (activations, pre_activations, masks)


def _check_inputs(net: Mlp, x) -> np.ndarray:
    x = as_matrix(x, "x")
    if x.shape[1] != net.layer_sizes[0]:
        raise ShapeMismatch(f"network expects {net.layer_sizes[0]} features, got {x.shape[1]}")
    return x


def forward(net: Mlp, x_h, dropout_rate: float = 0.0, rng: RandomStream | np.random.Generator | None = None):
    """
    One forward pass for a single input.

    Hidden layers use ReLU. With an ``rng`` and a positive ``dropout_rate``
    each hidden unit is kept with probability 1 - dropout_rate and scaled by
    1 / (1 - dropout_rate); without an rng the pass is deterministic.

    Returns:
        (y_mean, log_sigma2) for regression networks, the softmax probability
        vector for classification networks.

    Raises:
        ShapeMismatch: x_h has the wrong number of features
    """
    x = as_vector(x_h, "x_h")
    if x.size != net.layer_sizes[0]:
        raise ShapeMismatch(f"network expects {net.layer_sizes[0]} features, got {x.size}")
    out, _ = _forward_batch(net, x[None, :], dropout_rate, _as_generator(rng))
    if net.task is TaskKind.CLASSIFICATION:
        return special.softmax(out[0])
    return float(out[0, 0]), float(out[0, 1])


def _l2_penalty(net: Mlp, l2_weight: float) -> float:
    return l2_weight * sum(float(np.sum(w * w)) for w in net.weights)


def attenuated_loss(preds, targets, l2_weight: float, net: Mlp) -> float:
    """
    Mean of ½·exp(-s)·(y - μ)² + ½·s over samples, plus l2_weight·Σw².

    Args:
        preds: (μ, s) pairs with s = log σ²
        targets: observed y, one per pair

    Raises:
        LengthMismatch: preds and targets differ in length
    """
    pairs = np.asarray(preds, dtype=np.float64).reshape(-1, 2)
    y = as_vector(targets, "targets")
    if pairs.shape[0] != y.size:
        raise LengthMismatch(f"{pairs.shape[0]} predictions but {y.size} targets")
    if y.size == 0:
        raise EmptyInput("no samples")
    mu, s = pairs[:, 0], pairs[:, 1]
    per_sample = 0.5 * np.exp(-s) * (y - mu) ** 2 + 0.5 * s
    return float(per_sample.mean()) + _l2_penalty(net, l2_weight)


def _data_loss_and_delta(net: Mlp, out: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    n = out.shape[0]
    if net.task is TaskKind.CLASSIFICATION:
        log_p = special.log_softmax(out, axis=1)
        codes = y.astype(np.int64)
        loss = -float(log_p[np.arange(n), codes].mean())
        delta = np.exp(log_p)
        delta[np.arange(n), codes] -= 1.0
        return loss, delta / n
    mu, s = out[:, 0], out[:, 1]
    precision = np.exp(-s)
    residual = y - mu
    loss = float(np.mean(0.5 * precision * residual**2 + 0.5 * s))
    delta = np.empty_like(out)
    delta[:, 0] = -precision * residual
    delta[:, 1] = 0.5 - 0.5 * precision * residual**2
    return loss, delta / n


def loss_and_gradients(
    net: Mlp,
    x,
    y,
    l2_weight: float,
    dropout_rate: float = 0.0,
    rng: RandomStream | np.random.Generator | None = None,
) -> tuple[float, list[tuple[np.ndarray, np.ndarray]]]:
    """
    Training loss and its reverse-mode gradient.

    The loss is :func:`attenuated_loss` for regression and mean cross-entropy
    for classification, both with the L2 term.

    Returns:
        (loss, [(dL/dW, dL/db) per layer])
    """
    x = _check_inputs(net, x)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size != x.shape[0]:
        raise LengthMismatch(f"{x.shape[0]} inputs but {y.size} targets")
    out, (activations, pre_activations, masks) = _forward_batch(net, x, dropout_rate, _as_generator(rng))
    loss, delta = _data_loss_and_delta(net, out, y)
    loss += _l2_penalty(net, l2_weight)

    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(net.weights)  # type: ignore[list-item]
    for layer in range(len(net.weights) - 1, -1, -1):
        w = net.weights[layer]
        grads[layer] = (activations[layer].T @ delta + 2.0 * l2_weight * w, delta.sum(axis=0))
        if layer == 0:
            break
        delta = delta @ w.T
        if masks[layer - 1] is not None:
            delta = delta * masks[layer - 1]
        delta = delta * (pre_activations[layer - 1] > 0.0)
    return loss, grads


def training_loss(net: Mlp, x, y, l2_weight: float) -> float:
    """Dropout-off loss over the whole training set."""
    loss, _ = loss_and_gradients(net, x, y, l2_weight)
    return loss


def _clip(grads, grad_clip: float | None):
    if grad_clip is None:
        return grads
    norm = math.sqrt(sum(float(np.sum(gw * gw) + np.sum(gb * gb)) for gw, gb in grads))
    if norm <= grad_clip:
        return grads
    scale = grad_clip / norm
    return [(gw * scale, gb * scale) for gw, gb in grads]


def train(x, y, config: MlpConfig) -> Mlp:
    """
    Minibatch SGD (with momentum) on the training loss, dropout active.

    Each epoch shuffles the rows with its own derived stream. The returned
    network is the one with the lowest dropout-off training loss seen, so its
    loss never exceeds the loss at initialization.

    Raises:
        ShapeMismatch: x disagrees with config.layer_sizes[0]
        InvalidConfig: fewer rows than batch_size
        DivergedTraining: the loss became non-finite
    """
    net = init_mlp(config)
    x = _check_inputs(net, x)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = x.shape[0]
    if y.size != n:
        raise LengthMismatch(f"{n} inputs but {y.size} targets")
    if n < config.batch_size:
        raise InvalidConfig(f"batch_size {config.batch_size} exceeds the {n} training rows")
    if config.task is TaskKind.CLASSIFICATION and (y.min() < 0 or y.max() >= config.layer_sizes[-1]):
        raise InvalidConfig(f"class labels must lie in [0, {config.layer_sizes[-1]})")

    velocity = [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(net.weights, net.biases)]
    best_loss = training_loss(net, x, y, config.l2_weight)
    best = net.copy()
    history = [best_loss]
    epoch_streams = RandomStream(config.master_seed, STREAM_BNN_EPOCH)

    for epoch in range(1, config.epochs + 1):
        rng = epoch_streams.child(epoch).generator()
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            rows = order[start : start + config.batch_size]
            loss, grads = loss_and_gradients(net, x[rows], y[rows], config.l2_weight, config.dropout_rate, rng)
            if not math.isfinite(loss):
                raise DivergedTraining(f"minibatch loss became {loss} in epoch {epoch}; lower the learning rate")
            grads = _clip(grads, config.grad_clip)
            for layer, (gw, gb) in enumerate(grads):
                vw, vb = velocity[layer]
                vw *= config.momentum
                vw -= config.learning_rate * gw
                vb *= config.momentum
                vb -= config.learning_rate * gb
                net.weights[layer] += vw
                net.biases[layer] += vb

        epoch_loss = training_loss(net, x, y, config.l2_weight)
        if not math.isfinite(epoch_loss):
            raise DivergedTraining(f"training loss became {epoch_loss} in epoch {epoch}; lower the learning rate")
        history.append(epoch_loss)
        _LOGGER.debug("Epoch %d loss %.6g", epoch, epoch_loss)
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best = net.copy()

    best.loss_history = history
    _LOGGER.info(
        "Trained %s network %s for %d epochs: loss %.6g -> %.6g",
        config.task.value,
        config.layer_sizes,
        config.epochs,
        history[0],
        best_loss,
    )
    return best


def _mc_outputs(net: Mlp, x: np.ndarray, config: MlpConfig) -> np.ndarray:
    """Raw outputs of every MC pass, shape (T, n, outputs), in pass order."""
    passes = config.mc_passes
    streams = RandomStream(config.master_seed, STREAM_BNN_MC)

    def one_pass(t: int) -> np.ndarray:
        out, _ = _forward_batch(net, x, config.dropout_rate, streams.child(t).generator())
        return out

    outputs = Parallel(n_jobs=config.n_jobs, prefer="threads")(delayed(one_pass)(t) for t in range(passes))
    return np.stack(outputs)


def _check_passes(config: MlpConfig) -> None:
    if config.mc_passes < 2:
        raise InvalidT(f"MC prediction needs at least 2 passes, got {config.mc_passes}")


def mc_predict_batch(net: Mlp, x, config: MlpConfig) -> McBatch:
    """
    T dropout-active passes over every row of x.

    Pass t draws its masks from its own stream, so results do not depend on
    n_jobs or completion order.

    Raises:
        InvalidT: fewer than 2 passes
    """
    _check_passes(config)
    if net.task is not TaskKind.REGRESSION:
        raise InvalidConfig("mc_predict needs a regression network; use mc_predict_proba")
    x = _check_inputs(net, x)
    outputs = _mc_outputs(net, x, config)
    means = outputs[:, :, 0]
    variances = np.exp(outputs[:, :, 1])
    # shifting by the first pass keeps identical passes at exactly zero variance
    epistemic = np.var(means - means[0], axis=0)
    _LOGGER.debug("MC prediction over %d inputs with T=%d", x.shape[0], config.mc_passes)
    return McBatch(
        mean=means.mean(axis=0),
        epistemic_var=epistemic,
        aleatoric_var=variances.mean(axis=0),
        samples=np.stack([means, variances], axis=-1),
    )


def mc_predict(net: Mlp, x_h, config: MlpConfig) -> McPrediction:
    """MC dropout predictive mean with its epistemic and aleatoric variances."""
    x = as_vector(x_h, "x_h")
    return mc_predict_batch(net, x[None, :], config)[0]


def mc_predict_proba(net: Mlp, x, config: MlpConfig) -> np.ndarray:
    """
    Per-pass softmax probabilities of a classification network.

    Returns:
        (T, classes) for a single input vector, (T, n, classes) for a matrix;
        the layout :func:`uq_toolkit.infotheory.decompose_batch` takes.
    """
    _check_passes(config)
    if net.task is not TaskKind.CLASSIFICATION:
        raise InvalidConfig("mc_predict_proba needs a classification network")
    single = np.ndim(x) == 1
    x = _check_inputs(net, np.asarray(x, dtype=np.float64)[None, :] if single else x)
    probs = special.softmax(_mc_outputs(net, x, config), axis=-1)
    return probs[:, 0, :] if single else probs


def mlp_to_dict(net: Mlp) -> dict[str, Any]:
    return {
        "format": MLP_FORMAT,
        "version": MLP_FORMAT_VERSION,
        "task": net.task.value,
        "layer_sizes": list(net.layer_sizes),
        "weights": [w.ravel().tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def mlp_from_dict(data: dict[str, Any]) -> Mlp:
    if data.get("format") != MLP_FORMAT:
        raise InvalidConfig(f"not a serialized network: format={data.get('format')!r}")
    sizes = [int(s) for s in data["layer_sizes"]]
    weights = [
        np.asarray(flat, dtype=np.float64).reshape(fan_in, fan_out)
        for flat, fan_in, fan_out in zip(data["weights"], sizes[:-1], sizes[1:])
    ]
    biases = [np.asarray(b, dtype=np.float64) for b in data["biases"]]
    return Mlp(weights=weights, biases=biases, task=TaskKind(data["task"]))


def save_mlp(net: Mlp, path: str | Path) -> None:
    Path(path).write_text(json.dumps(mlp_to_dict(net)), encoding="utf-8")


def load_mlp(path: str | Path) -> Mlp:
    return mlp_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def training_log_frame(net: Mlp) -> pd.DataFrame:
    return pd.DataFrame({"epoch": np.arange(len(net.loss_history)), "loss": net.loss_history})


def write_training_log(net: Mlp, path: str | Path) -> None:
    training_log_frame(net).to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
