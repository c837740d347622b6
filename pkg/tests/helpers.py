"""Shared test utilities."""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np

from jlvae.model import ModelConfig, ReconLoss, init_params, loss_backward, loss_forward
from jlvae.numerics import finite_diff_grad, max_rel_error


def random_small_config(rng: np.random.Generator, recon: ReconLoss, l1: float) -> ModelConfig:
    def hidden():
        return [int(h) for h in rng.integers(2, 6, size=rng.integers(0, 3))]

    return ModelConfig(
        dim_x=int(rng.integers(2, 5)),
        dim_c=int(rng.integers(1, 4)),
        latent_x=int(rng.integers(1, 3)),
        latent_c=int(rng.integers(1, 3)),
        recognizer_x_hidden=hidden(),
        recognizer_c_hidden=hidden(),
        generator_x_hidden=hidden(),
        generator_c_hidden=hidden(),
        l1_lambda=l1,
        mc_samples_train=int(rng.integers(1, 3)),
        recon_loss=recon,
    )


def model_gradcheck(config: ModelConfig, seed: int, n_rows: int = 4) -> float:
    """Max relative error between backprop and central differences on every parameter."""
    rng = np.random.Generator(np.random.PCG64(seed))
    params = init_params(config, seed)
    # zero biases put pre-activations exactly on the ReLU corner when a whole
    # previous layer is inactive; check at a generic point instead
    for _, mlp in params.networks():
        for layer in mlp.layers:
            layer.bias[...] = rng.uniform(-0.5, 0.5, size=layer.bias.shape)
    x = rng.uniform(0.0, 1.0, size=(n_rows, config.dim_x))
    c = rng.uniform(0.0, 1.0, size=(n_rows, config.dim_c))
    L = config.mc_samples_train
    eps_x = rng.standard_normal((L, n_rows, config.latent_x))
    eps_c = rng.standard_normal((L, n_rows, config.latent_c))
    _, cache = loss_forward(params, x, c, eps_x, eps_c, config)
    analytic = loss_backward(params, cache).arrays()

    def f() -> float:
        return loss_forward(params, x, c, eps_x, eps_c, config)[0].total

    numeric = finite_diff_grad(f, params.arrays(), eps=1e-5)
    return max(max_rel_error(a, n, floor=1e-7) for a, n in zip(analytic, numeric))


# brute-force oracles, exact rational arithmetic


def oracle_roc(s, y):
    pos = [a for a, l in zip(s, y) if l]
    neg = [a for a, l in zip(s, y) if not l]
    total = Fraction(0)
    for a, b in itertools.product(pos, neg):
        total += 1 if a > b else Fraction(1, 2) if a == b else 0
    return total / (len(pos) * len(neg))


def oracle_curve(s, y):
    n_pos = sum(y)
    n_neg = len(y) - n_pos
    out = []
    for t in sorted(set(s), reverse=True):
        tp = sum(1 for a, l in zip(s, y) if a >= t and l)
        fp = sum(1 for a, l in zip(s, y) if a >= t and not l)
        out.append((t, Fraction(tp, tp + fp), Fraction(tp, n_pos), Fraction(fp, n_neg) if n_neg else 0))
    return out


def oracle_aps(s, y):
    prev = Fraction(0)
    total = Fraction(0)
    for _, p, r, _ in oracle_curve(s, y):
        total += (r - prev) * p
        prev = r
    return total


def oracle_topk(s, y, k):
    order = sorted(range(len(s)), key=lambda i: (-s[i], i))
    return Fraction(sum(y[i] for i in order[:k]), k)


def metric_instance(rng):
    n = int(rng.integers(2, 65))
    y = rng.random(n) < rng.uniform(0.1, 0.9)
    if y.all() or not y.any():
        y[0] = not y[0]
    # few distinct values so ties are common
    s = rng.integers(0, int(rng.integers(2, 12)), size=n).astype(float) / 4.0
    return s, y
