"""Dense ReLU network with softmax cross-entropy, trained by plain minibatch SGD.

All parameters live in one flat float64 vector so that client models can be
averaged, compared and shipped around as single arrays.  Per layer the layout
is the (fan_in x fan_out) weight matrix in row-major order followed by the
bias vector.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels


@dataclass(frozen=True)
class ModelParams:
    layer_sizes: tuple[int, ...]
    weights: np.ndarray

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size != param_count(sizes):
            raise ValueError(
                f"weights has {w.size} entries, layer sizes {sizes} need {param_count(sizes)}"
            )
        object.__setattr__(self, "weights", w)

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(W, b) views into the flat vector, one pair per layer."""
        return _unpack(self.weights, self.layer_sizes)

    def with_weights(self, weights: np.ndarray) -> "ModelParams":
        return ModelParams(self.layer_sizes, weights)

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1
    batch_size: int = 64
    learning_rate: float = 0.05
    prox_mu: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.prox_mu < 0:
            raise ValueError("prox_mu must be >= 0")


def param_count(layer_sizes: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))


def _unpack(flat: np.ndarray, sizes: Sequence[int]) -> list[tuple[np.ndarray, np.ndarray]]:
    out = []
    pos = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = flat[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = flat[pos : pos + fan_out]
        pos += fan_out
        out.append((W, b))
    return out


def init_model(layer_sizes: Sequence[int], seed: int) -> ModelParams:
    """Glorot-uniform weights and zero biases, reproducible from ``seed``."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise ValueError("need at least an input and an output layer")
    if any(s <= 0 for s in sizes):
        raise ValueError(f"layer sizes must be positive, got {sizes}")
    rng = np.random.default_rng(seed)
    flat = np.zeros(param_count(sizes), dtype=np.float64)
    for W, _ in _unpack(flat, sizes):
        fan_in, fan_out = W.shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        W[...] = rng.uniform(-limit, limit, size=W.shape)
    return ModelParams(sizes, flat)


def _check_features(model: ModelParams, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.shape[-1] != model.layer_sizes[0]:
        raise ValueError(
            f"feature dimension {x.shape[-1]} does not match input layer {model.layer_sizes[0]}"
        )
    return x


def logits(model: ModelParams, features: np.ndarray) -> np.ndarray:
    x = _check_features(model, features)
    h = np.atleast_2d(x)
    layers = model.layers()
    for W, b in layers[:-1]:
        h = np.maximum(h @ W + b, 0.0)
    W, b = layers[-1]
    out = h @ W + b
    return out if x.ndim > 1 else out[0]


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(model: ModelParams, features: np.ndarray) -> np.ndarray:
    """Class probabilities, one row per input row."""
    return _softmax(logits(model, features))


def loss_and_grad(
    model: ModelParams,
    x: np.ndarray,
    y: np.ndarray,
    anchor: ModelParams | None = None,
    prox_mu: float = 0.0,
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch (+ proximal term) and its flat gradient."""
    layers = model.layers()
    acts = [x]
    h = x
    for W, b in layers[:-1]:
        h = np.maximum(h @ W + b, 0.0)
        acts.append(h)
    W, b = layers[-1]
    z = h @ W + b
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    n = x.shape[0]
    rows = np.arange(n)
    loss = float(np.mean(logsum - z[rows, y]))

    grad = np.zeros_like(model.weights)
    grads = _unpack(grad, model.layer_sizes)
    delta = np.exp(z - logsum[:, None])
    delta[rows, y] -= 1.0
    delta /= n
    for k in range(len(layers) - 1, -1, -1):
        gW, gb = grads[k]
        gW[...] = acts[k].T @ delta
        gb[...] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ layers[k][0].T) * (acts[k] > 0)

    if prox_mu > 0:
        diff = model.weights - anchor.weights
        loss += 0.5 * prox_mu * float(diff @ diff)
        grad += prox_mu * diff
    return loss, grad


def local_update(
    model: ModelParams,
    dataset,
    config: TrainConfig,
    anchor: ModelParams | None = None,
) -> ModelParams:
    """Run ``config.epochs`` epochs of shuffled minibatch SGD; the input is left untouched."""
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if anchor is not None and anchor.layer_sizes != model.layer_sizes:
        raise ValueError("anchor model shape does not match the model being trained")
    if config.prox_mu > 0 and anchor is None:
        raise ValueError("prox_mu > 0 requires an anchor model")
    x = _check_features(model, dataset.features)
    y = dataset.labels
    w = model.weights.copy()
    current = model.with_weights(w)
    rng = np.random.default_rng(config.seed)
    n = x.shape[0]
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            _, g = loss_and_grad(current, x[idx], y[idx], anchor, config.prox_mu)
            w -= config.learning_rate * g
    if not np.all(np.isfinite(w)):
        raise FloatingPointError("training diverged: non-finite weights")
    return model.with_weights(w)


def mean_loss(model: ModelParams, dataset) -> float:
    loss, _ = loss_and_grad(model, _check_features(model, dataset.features), dataset.labels)
    return loss


def evaluate(model: ModelParams, dataset) -> np.ndarray:
    """Confusion counts: entry (c, j) = samples of class c predicted as j."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    scores = np.ascontiguousarray(np.atleast_2d(logits(model, dataset.features)))
    labels = np.ascontiguousarray(dataset.labels, dtype=np.int64)
    return kernels.confusion_from_scores(scores, labels, model.num_classes)


def accuracy(model: ModelParams, dataset) -> float:
    cm = evaluate(model, dataset)
    return float(np.trace(cm) / cm.sum())


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(getattr(a, "weights", a), dtype=np.float64)
    b = np.asarray(getattr(b, "weights", b), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("vectors differ in length")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))
