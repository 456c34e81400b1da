"""Dense multi-layer perceptrons with hand-derived backpropagation.

No autodiff framework: gradients for every layer are written out explicitly
and validated against central finite differences in the test suite. The same
machinery serves both networks in the correction stage, including gradients
with respect to the *input* (needed to push the corrector's output through
the frozen collision predictor).

Weights persist as JSON::

    {"format_version": 1,
     "layers": [{"rows", "cols", "weights": [row-major], "bias": [..], "activation"}],
     "output_squash": {"center": [..], "half_range": [..]}}   # optional

``output_squash`` maps the last layer's output y onto fixed intervals via
center + half_range * tanh(y), used to keep corrected joint vectors inside
the joint limits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1

ACTIVATIONS = ("linear", "relu", "sigmoid", "tanh")


class NetworkError(ValueError):
    """Raised for malformed network structures or weight files."""


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "linear":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        # evaluated piecewise so exp never overflows
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if name == "tanh":
        return np.tanh(z)
    raise NetworkError(f"unknown activation '{name}'")


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Derivative of the activation at pre-activation z (a = act(z))."""
    if name == "linear":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "tanh":
        return 1.0 - a * a
    raise NetworkError(f"unknown activation '{name}'")


@dataclass
class DenseLayer:
    weights: np.ndarray  # (rows, cols) = (fan_out, fan_in)
    bias: np.ndarray  # (rows,)
    activation: str

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float).reshape(-1)
        if self.weights.ndim != 2 or self.weights.shape[0] != self.bias.shape[0]:
            raise NetworkError("layer weight/bias shapes do not chain")
        if self.activation not in ACTIVATIONS:
            raise NetworkError(f"unknown activation '{self.activation}'")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise NetworkError("non-finite parameters")


class Mlp:
    """Feed-forward network; optionally squashes the output onto intervals."""

    def __init__(self, layers: list[DenseLayer], output_squash: tuple[np.ndarray, np.ndarray] | None = None):
        if not layers:
            raise NetworkError("network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.weights.shape[1] != prev.weights.shape[0]:
                raise NetworkError(
                    f"layer dimensions do not chain: {prev.weights.shape} -> {nxt.weights.shape}"
                )
        self.layers = layers
        if output_squash is not None:
            center, half_range = output_squash
            center = np.asarray(center, dtype=float).reshape(-1)
            half_range = np.asarray(half_range, dtype=float).reshape(-1)
            out_dim = layers[-1].weights.shape[0]
            if center.shape[0] != out_dim or half_range.shape[0] != out_dim:
                raise NetworkError("output squash size must match the last layer")
            output_squash = (center, half_range)
        self.output_squash = output_squash

    @property
    def in_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weights.shape[0]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.in_dim] + [l.weights.shape[0] for l in self.layers]

    # ------------------------------------------------------------------
    def forward(self, x: np.ndarray, cache: list | None = None) -> np.ndarray:
        """Batch forward pass; x is (n, in_dim) or (in_dim,).

        Pass a list as ``cache`` to record intermediates for ``backward``.
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        a = x.reshape(1, -1) if single else x
        if a.shape[1] != self.in_dim:
            raise NetworkError(f"expected input dim {self.in_dim}, got {a.shape[1]}")
        if cache is not None:
            cache.append(a)
        for layer in self.layers:
            z = a @ layer.weights.T + layer.bias
            a = _act(layer.activation, z)
            if cache is not None:
                cache.append((z, a))
        if self.output_squash is not None:
            center, half_range = self.output_squash
            t = np.tanh(a)
            if cache is not None:
                cache.append(t)
            a = center + half_range * t
        return a[0] if single else a

    def backward(self, cache: list, d_out: np.ndarray):
        """Gradients for one recorded forward pass.

        ``d_out`` is dLoss/d(output), shape like the forward output. Returns
        (grads, d_input) where grads is a list of (dW, db) per layer.
        """
        d = np.asarray(d_out, dtype=float)
        if d.ndim == 1:
            d = d.reshape(1, -1)
        idx = len(cache) - 1
        if self.output_squash is not None:
            center, half_range = self.output_squash
            t = cache[idx]
            idx -= 1
            d = d * half_range * (1.0 - t * t)
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(self.layers)  # type: ignore
        for li in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[li]
            z, a = cache[idx]
            idx -= 1
            prev_a = cache[0] if idx == 0 else cache[idx][1]
            dz = d * _act_grad(layer.activation, z, a)
            grads[li] = (dz.T @ prev_a, dz.sum(axis=0))
            d = dz @ layer.weights
        return grads, d

    def input_gradient(self, x: np.ndarray, d_out: np.ndarray) -> np.ndarray:
        """dLoss/d(input) without accumulating parameter gradients."""
        cache: list = []
        self.forward(x, cache)
        _, d_in = self.backward(cache, d_out)
        return d_in

    # ------------------------------------------------------------------
    def to_dict(self) -> dict:
        doc = {
            "format_version": FORMAT_VERSION,
            "layers": [
                {
                    "rows": int(l.weights.shape[0]),
                    "cols": int(l.weights.shape[1]),
                    "weights": [float(v) for v in l.weights.ravel()],
                    "bias": [float(v) for v in l.bias],
                    "activation": l.activation,
                }
                for l in self.layers
            ],
        }
        if self.output_squash is not None:
            center, half_range = self.output_squash
            doc["output_squash"] = {
                "center": [float(v) for v in center],
                "half_range": [float(v) for v in half_range],
            }
        return doc

    @staticmethod
    def from_dict(doc: dict) -> "Mlp":
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise NetworkError(f"unsupported weights format_version {version!r}")
        layers = []
        for k, ld in enumerate(doc["layers"]):
            rows, cols = int(ld["rows"]), int(ld["cols"])
            w = np.asarray(ld["weights"], dtype=float)
            if w.size != rows * cols:
                raise NetworkError(f"layer {k}: expected {rows * cols} weights, got {w.size}")
            layers.append(DenseLayer(w.reshape(rows, cols), np.asarray(ld["bias"]), ld["activation"]))
        squash = None
        if "output_squash" in doc:
            sq = doc["output_squash"]
            squash = (np.asarray(sq["center"], dtype=float), np.asarray(sq["half_range"], dtype=float))
        return Mlp(layers, squash)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @staticmethod
    def load(path) -> "Mlp":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise NetworkError(f"{path}: invalid JSON: {exc}") from exc
        return Mlp.from_dict(doc)


def init_mlp(sizes: list[int], activations: list[str], rng: np.random.Generator,
             output_squash: tuple[np.ndarray, np.ndarray] | None = None) -> Mlp:
    """He-style initialization, biases at zero."""
    if len(activations) != len(sizes) - 1:
        raise NetworkError("need one activation per layer")
    layers = []
    for fan_in, fan_out, act in zip(sizes, sizes[1:], activations):
        std = np.sqrt(2.0 / fan_in)
        layers.append(DenseLayer(rng.normal(0.0, std, (fan_out, fan_in)), np.zeros(fan_out), act))
    return Mlp(layers, output_squash)


class Adam:
    """Adaptive-moment gradient steps over an Mlp's parameters."""

    def __init__(self, net: Mlp, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.net = net
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [(np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in net.layers]
        self._v = [(np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in net.layers]

    def step(self, grads):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for layer, (dw, db), m, v in zip(self.net.layers, grads, self._m, self._v):
            for param, g, mi, vi in ((layer.weights, dw, m[0], v[0]), (layer.bias, db, m[1], v[1])):
                mi *= self.beta1
                mi += (1.0 - self.beta1) * g
                vi *= self.beta2
                vi += (1.0 - self.beta2) * g * g
                param -= self.lr * (mi / b1c) / (np.sqrt(vi / b2c) + self.eps)
