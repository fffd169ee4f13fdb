"""Dense softmax classifier with analytic gradients.

Parameters live in one flat float64 vector.  Layer ``l`` contributes its
weight matrix (``fan_in x fan_out``, row-major) followed by its bias.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigurationError, EmptyClassError, NumericError

PROB_FLOOR = 1e-12

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "sigmoid": (
        lambda z: 0.5 * (1.0 + np.tanh(0.5 * z)),
        lambda z, a: a * (1.0 - a),
    ),
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(z.dtype)),
}


@dataclass(frozen=True)
class NetworkArch:
    layer_sizes: tuple[int, ...]
    activation: str = "tanh"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ConfigurationError("an architecture needs at least 2 layers")
        if any(s < 1 for s in sizes):
            raise ConfigurationError(f"layer sizes must be positive, got {sizes}")
        if sizes[-1] < 2:
            raise ConfigurationError("the output layer needs at least 2 classes")
        if self.activation not in _ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @cached_property
    def _offsets(self) -> list[tuple[int, int, int]]:
        out, pos = [], 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            out.append((pos, fan_in, fan_out))
            pos += fan_in * fan_out + fan_out
        return out

    @property
    def n_params(self) -> int:
        pos, fan_in, fan_out = self._offsets[-1]
        return pos + fan_in * fan_out + fan_out

    def unflatten(self, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views of (W, b) per layer; no copies are made."""
        check_params(self, params)
        layers = []
        for pos, fan_in, fan_out in self._offsets:
            w = params[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out)
            b = params[pos + fan_in * fan_out : pos + fan_in * fan_out + fan_out]
            layers.append((w, b))
        return layers

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases."""
        params = np.empty(self.n_params)
        for pos, fan_in, fan_out in self._offsets:
            r = 1.0 / np.sqrt(fan_in)
            size = fan_in * fan_out + fan_out
            params[pos : pos + size] = rng.uniform(-r, r, size=size)
        return params


def check_params(arch: NetworkArch, params: np.ndarray) -> None:
    if params.ndim != 1 or params.shape[0] != arch.n_params:
        raise ConfigurationError(
            f"parameter vector of shape {params.shape} does not match "
            f"architecture {arch.layer_sizes} ({arch.n_params} parameters)"
        )


def _check_batch(arch: NetworkArch, features: np.ndarray, labels: np.ndarray | None = None):
    if features.ndim != 2 or features.shape[1] != arch.n_inputs:
        raise ConfigurationError(
            f"features of shape {features.shape} do not match input size {arch.n_inputs}"
        )
    if features.shape[0] == 0:
        raise ConfigurationError("empty batch")
    if labels is not None:
        if labels.shape != (features.shape[0],):
            raise ConfigurationError("labels and features have different row counts")
        if labels.min() < 0 or labels.max() >= arch.n_classes:
            raise ConfigurationError("labels out of range")


def _forward(arch, params, features):
    act, _ = _ACTIVATIONS[arch.activation]
    layers = arch.unflatten(params)
    pre, post = [], [features]
    h = features
    for i, (w, b) in enumerate(layers):
        z = h @ w + b
        pre.append(z)
        h = act(z) if i < len(layers) - 1 else z
        post.append(h)
    logits = post[-1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    return probs, pre, post


def forward(arch: NetworkArch, params: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Class-probability matrix, one row per sample."""
    _check_batch(arch, features)
    return _forward(arch, params, features)[0]


def predict(arch: NetworkArch, params: np.ndarray, features: np.ndarray) -> np.ndarray:
    return forward(arch, params, features).argmax(axis=1)


def loss(arch: NetworkArch, params: np.ndarray, features: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy with probabilities clamped to [1e-12, 1]."""
    _check_batch(arch, features, labels)
    probs = _forward(arch, params, features)[0]
    p_true = np.clip(probs[np.arange(len(labels)), labels], PROB_FLOOR, 1.0)
    return float(-np.mean(np.log(p_true)))


def gradient(
    arch: NetworkArch, params: np.ndarray, features: np.ndarray, labels: np.ndarray
) -> np.ndarray:
    """Gradient of the mean cross-entropy with respect to the flat parameters."""
    _check_batch(arch, features, labels)
    _, dact = _ACTIVATIONS[arch.activation]
    probs, pre, post = _forward(arch, params, features)
    layers = arch.unflatten(params)
    n = features.shape[0]

    delta = probs.copy()
    delta[np.arange(n), labels] -= 1.0
    delta /= n

    grads = []
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        grads.append((post[i].T @ delta, delta.sum(axis=0)))
        if i > 0:
            delta = (delta @ w.T) * dact(pre[i - 1], post[i])
    grads.reverse()
    return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])


def per_class_gradient(
    arch: NetworkArch, params: np.ndarray, features: np.ndarray, labels: np.ndarray, c: int
) -> np.ndarray:
    """Gradient of the mean cross-entropy over the samples of class ``c`` only."""
    mask = labels == c
    if not mask.any():
        raise EmptyClassError(c)
    return gradient(arch, params, features[mask], labels[mask])


def class_gradient_matrix(
    arch: NetworkArch, params: np.ndarray, features: np.ndarray, labels: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Stack of per-class gradients (C x P) and a mask of classes that were present.

    Rows for absent classes are zero.
    """
    out = np.zeros((arch.n_classes, arch.n_params))
    present = np.zeros(arch.n_classes, dtype=bool)
    for c in range(arch.n_classes):
        mask = labels == c
        if mask.any():
            out[c] = gradient(arch, params, features[mask], labels[mask])
            present[c] = True
    return out, present


def sgd_step(params: np.ndarray, grad: np.ndarray, eta: float) -> np.ndarray:
    if params.shape != grad.shape:
        raise ConfigurationError("parameter and gradient shapes differ")
    if not eta >= 0:
        raise ConfigurationError(f"learning rate must be non-negative, got {eta}")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient entries")
    return params - eta * grad
