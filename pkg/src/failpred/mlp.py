"""Dense feedforward nets on float64 numpy: init, forward, backprop, AdamW.

Kept dependency-free so that training is bitwise reproducible for a fixed
seed and parameter gradients stay analytically checkable against finite
differences.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("leaky_relu", "relu", "none")

# One (weights, bias) pair per layer.
Params = list[tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths (input first, output last) and per-layer activations.

    ``activations`` has one entry per weight layer; the last entry is
    normally ``"none"`` so the net ends linear.
    """

    widths: tuple[int, ...]
    activations: tuple[str, ...]
    leaky_slope: float = 0.01

    def validate(self) -> None:
        if len(self.widths) < 2:
            raise ValueError("need at least an input and an output width")
        if any(w < 1 for w in self.widths):
            raise ValueError(f"widths must be positive, got {self.widths}")
        if len(self.activations) != len(self.widths) - 1:
            raise ValueError(
                f"expected {len(self.widths) - 1} activations, got {len(self.activations)}"
            )
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]


def init_params(spec: MlpSpec, rng: np.random.Generator) -> Params:
    """Uniform fan-in init: W, b ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    spec.validate()
    params: Params = []
    for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out)
        params.append((w, b))
    return params


def _activate(z: np.ndarray, kind: str, slope: float) -> np.ndarray:
    if kind == "leaky_relu":
        return np.where(z > 0.0, z, slope * z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _activate_grad(z: np.ndarray, kind: str, slope: float) -> np.ndarray:
    if kind == "leaky_relu":
        return np.where(z > 0.0, 1.0, slope)
    if kind == "relu":
        return np.where(z > 0.0, 1.0, 0.0)
    return np.ones_like(z)


def forward(spec: MlpSpec, params: Params, x: np.ndarray) -> np.ndarray:
    """Map (N, in_dim) to (N, out_dim)."""
    h = x
    for (w, b), act in zip(params, spec.activations):
        h = _activate(h @ w + b, act, spec.leaky_slope)
    return h


def forward_cached(
    spec: MlpSpec, params: Params, x: np.ndarray
) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    """Forward pass keeping (input, pre-activation) per layer for backprop."""
    cache = []
    h = x
    for (w, b), act in zip(params, spec.activations):
        z = h @ w + b
        cache.append((h, z))
        h = _activate(z, act, spec.leaky_slope)
    return h, cache


def backward(
    spec: MlpSpec,
    params: Params,
    cache: list[tuple[np.ndarray, np.ndarray]],
    grad_out: np.ndarray,
) -> Params:
    """Parameter gradients for a batched output gradient (N, out_dim)."""
    grads: Params = [None] * len(params)  # type: ignore[list-item]
    g = grad_out
    for layer in range(len(params) - 1, -1, -1):
        h_in, z = cache[layer]
        g = g * _activate_grad(z, spec.activations[layer], spec.leaky_slope)
        grads[layer] = (h_in.T @ g, g.sum(axis=0))
        if layer > 0:
            g = g @ params[layer][0].T
    return grads


class AdamW:
    """Adam with decoupled weight decay on the weights and biases."""

    def __init__(
        self,
        params: Params,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 1e-5,
    ):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]
        self._v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]

    def step(self, params: Params, grads: Params, lr: float) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for i, ((w, b), (gw, gb)) in enumerate(zip(params, grads)):
            for j, (theta, grad) in enumerate(((w, gw), (b, gb))):
                m = self._m[i][j]
                v = self._v[i][j]
                m *= self.beta1
                m += (1.0 - self.beta1) * grad
                v *= self.beta2
                v += (1.0 - self.beta2) * grad * grad
                update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
                theta -= lr * (update + self.weight_decay * theta)


def cosine_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    """Cosine decay over the run, no warmup; epoch 0 runs at base_lr."""
    if total_epochs <= 1:
        return base_lr
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


def copy_params(params: Params) -> Params:
    return [(w.copy(), b.copy()) for w, b in params]


def params_equal(a: Params, b: Params) -> bool:
    return len(a) == len(b) and all(
        wa.shape == wb.shape
        and ba.shape == bb.shape
        and np.array_equal(wa, wb)
        and np.array_equal(ba, bb)
        for (wa, ba), (wb, bb) in zip(a, b)
    )
