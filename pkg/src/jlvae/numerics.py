"""Dense float64 kernels and a fixed-topology MLP with exact backprop.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64 (row-major).
Nothing in here draws random numbers; initialization lives in ``jlvae.model``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not line up."""

    def __init__(self, what: str, expected, got):
        self.what = what
        self.expected = expected
        self.got = got
        super().__init__(f"{what}: expected shape {expected}, got {got}")


class StaleCacheError(ValueError):
    pass


class Activation(str, Enum):
    RELU = "relu"
    LINEAR = "linear"


def as_matrix(data, checked: bool = True) -> np.ndarray:
    """Coerce ``data`` to a 2-D float64 array; reject NaN/Inf when ``checked``."""
    m = np.array(data, dtype=np.float64, copy=True)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError("matrix", "(rows, cols)", m.shape)
    if checked and not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")
    return m


@dataclass
class MlpLayer:
    weights: np.ndarray  # fan_in x fan_out
    bias: np.ndarray  # fan_out
    activation: Activation = Activation.RELU

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        self.activation = Activation(self.activation)
        if self.weights.ndim != 2:
            raise ShapeError("layer weights", "(fan_in, fan_out)", self.weights.shape)
        if self.bias.shape[0] != self.weights.shape[1]:
            raise ShapeError("layer bias", (self.weights.shape[1],), self.bias.shape)

    @property
    def fan_in(self) -> int:
        return self.weights.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "MlpLayer":
        return MlpLayer(self.weights.copy(), self.bias.copy(), self.activation)


@dataclass
class Mlp:
    layers: list[MlpLayer] = field(default_factory=list)

    def __post_init__(self):
        for i in range(len(self.layers) - 1):
            a, b = self.layers[i], self.layers[i + 1]
            if a.fan_out != b.fan_in:
                raise ShapeError(f"layer {i + 1} fan_in", a.fan_out, b.fan_in)

    @property
    def widths(self) -> list[int]:
        """Input width followed by each layer's output width."""
        if not self.layers:
            return []
        return [self.layers[0].fan_in] + [layer.fan_out for layer in self.layers]

    @property
    def in_dim(self) -> int:
        return self.layers[0].fan_in

    @property
    def out_dim(self) -> int:
        return self.layers[-1].fan_out

    def copy(self) -> "Mlp":
        return Mlp([layer.copy() for layer in self.layers])


@dataclass
class LayerGrad:
    weights: np.ndarray
    bias: np.ndarray


@dataclass
class MlpCache:
    """Per-call activation record: the input to every layer plus pre-activations."""

    mlp_id: int
    inputs: list[np.ndarray]
    pre: list[np.ndarray]


def _apply(act: Activation, pre: np.ndarray) -> np.ndarray:
    if act is Activation.RELU:
        return np.maximum(pre, 0.0)
    return pre


def affine_forward(inputs: np.ndarray, layer: MlpLayer) -> np.ndarray:
    if inputs.ndim != 2 or inputs.shape[1] != layer.fan_in:
        raise ShapeError("affine input", ("N", layer.fan_in), inputs.shape)
    return _apply(layer.activation, inputs @ layer.weights + layer.bias)


def mlp_forward(mlp: Mlp, inputs: np.ndarray) -> tuple[np.ndarray, MlpCache]:
    if inputs.ndim != 2 or inputs.shape[1] != mlp.in_dim:
        raise ShapeError("mlp input", ("N", mlp.in_dim), inputs.shape)
    cache = MlpCache(id(mlp), [], [])
    h = inputs
    for layer in mlp.layers:
        cache.inputs.append(h)
        pre = h @ layer.weights + layer.bias
        cache.pre.append(pre)
        h = _apply(layer.activation, pre)
    return h, cache


def mlp_backward(
    mlp: Mlp, cache: MlpCache, grad_output: np.ndarray
) -> tuple[list[LayerGrad], np.ndarray]:
    """Reverse-mode gradients of ``sum(grad_output * output)``.

    Returns per-layer parameter gradients (same order as ``mlp.layers``) and the
    gradient with respect to the network input.
    """
    if cache.mlp_id != id(mlp) or len(cache.pre) != len(mlp.layers):
        raise StaleCacheError("cache was not produced by this network")
    if grad_output.shape != cache.pre[-1].shape:
        raise ShapeError("grad_output", cache.pre[-1].shape, grad_output.shape)
    grads: list[LayerGrad] = [None] * len(mlp.layers)  # type: ignore[list-item]
    g = grad_output
    for i in range(len(mlp.layers) - 1, -1, -1):
        layer = mlp.layers[i]
        if layer.activation is Activation.RELU:
            # subgradient at 0 is 0
            g = g * (cache.pre[i] > 0.0)
        grads[i] = LayerGrad(cache.inputs[i].T @ g, g.sum(axis=0))
        g = g @ layer.weights.T
    return grads, g


def finite_diff_grad(
    scalar_fn: Callable[[], float], params: Sequence[np.ndarray], eps: float = 1e-5
) -> list[np.ndarray]:
    """Central-difference gradient of ``scalar_fn`` w.r.t. each array in ``params``.

    The arrays are perturbed in place and restored, so ``scalar_fn`` should read
    them by reference.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    out = []
    for p in params:
        g = np.zeros_like(p, dtype=np.float64)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            fp = scalar_fn()
            flat[j] = orig - eps
            fm = scalar_fn()
            flat[j] = orig
            gflat[j] = (fp - fm) / (2.0 * eps)
        out.append(g)
    return out


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Largest elementwise relative error; entries where both sides are below
    ``floor`` in magnitude are exempt."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    keep = (np.abs(a) >= floor) | (np.abs(n) >= floor)
    if not np.any(keep):
        return 0.0
    a, n = a[keep], n[keep]
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(a), np.abs(n))))
