"""Minibatch SGVB training with Adam and validation-based early stopping."""

from __future__ import annotations

import csv
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Iterator, Optional

import numpy as np

from .data.dataset import PreparedDataset
from .model import (
    JlvaeParams,
    LossBreakdown,
    ModelConfig,
    NonFiniteLossError,
    init_params,
    loss_backward,
    loss_forward,
)
from .numerics import ShapeError

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 200
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0 or self.adam_eps < 0:
            raise ValueError("learning_rate must be > 0 and adam_eps >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    step: int
    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def zeros_like(cls, arrays: list[np.ndarray]) -> "AdamState":
        return cls(0, [np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(
    state: AdamState, params: list[np.ndarray], grads: list[np.ndarray], config: TrainConfig
) -> tuple[AdamState, list[np.ndarray]]:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("adam operands", len(params), (len(grads), len(state.m)))
    b1, b2 = config.adam_beta1, config.adam_beta2
    t = state.step + 1
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeError("gradient", p.shape, g.shape)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
    state.step = t
    return state, params


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, epoch])))


def minibatch_iter(n_rows: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Row indices for one epoch: a permutation cut into consecutive batches."""
    if n_rows < 1:
        raise ValueError("cannot iterate over an empty dataset")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = rng.permutation(n_rows)
    for start in range(0, n_rows, batch_size):
        yield order[start : start + batch_size]


@dataclass
class EpochRecord:
    epoch: int
    train: LossBreakdown
    val: LossBreakdown
    seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    initial_train: Optional[LossBreakdown] = None
    initial_val: Optional[LossBreakdown] = None
    best_epoch: Optional[int] = None
    stopped_early: bool = False

    def best_val(self) -> Optional[float]:
        if not self.records:
            return None
        return min(r.val.total for r in self.records)

    def write_csv(self, path: os.PathLike) -> None:
        """Per-epoch losses. Wall times are left out so reruns are byte-identical."""
        header = ["epoch", "train_total", "train_kl_zx", "train_kl_zc", "train_recon_x",
                  "train_recon_c", "train_l1", "val_total"]  # fmt: skip
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in self.records:
                t = r.train
                w.writerow([r.epoch, repr(t.total), repr(t.kl_zx), repr(t.kl_zc), repr(t.recon_x),
                            repr(t.recon_c), repr(t.l1), repr(r.val.total)])  # fmt: skip


def evaluate_loss(params: JlvaeParams, data: PreparedDataset, config: ModelConfig) -> LossBreakdown:
    """Deterministic loss at the posterior means (eps = 0)."""
    n = len(data)
    zero_x = np.zeros((n, config.latent_x))
    zero_c = np.zeros((n, config.latent_c))
    return loss_forward(params, data.X, data.C, zero_x, zero_c, config)[0]


def _weighted_mean(parts: list[tuple[int, LossBreakdown]]) -> LossBreakdown:
    total = sum(n for n, _ in parts)
    vals = {k: sum(n * getattr(b, k) for n, b in parts) / total for k in LossBreakdown.TERMS}
    return LossBreakdown(**vals)


def train(
    train_set: PreparedDataset,
    val_set: PreparedDataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    init: Optional[JlvaeParams] = None,
) -> tuple[JlvaeParams, TrainHistory]:
    """Fit the model; return the parameters of the best validation epoch.

    Stops after ``patience`` consecutive epochs without a new best validation
    loss, or at ``max_epochs``.
    """
    for ds, name in ((train_set, "train"), (val_set, "val")):
        if ds.dim_x != model_config.dim_x or ds.dim_c != model_config.dim_c:
            raise ShapeError(f"{name} set widths", (model_config.dim_x, model_config.dim_c), (ds.dim_x, ds.dim_c))
    params = init.copy() if init is not None else init_params(model_config, train_config.seed)
    history = TrainHistory()
    if train_config.max_epochs == 0:
        return params, history

    history.initial_train = evaluate_loss(params, train_set, model_config)
    history.initial_val = evaluate_loss(params, val_set, model_config)
    arrays = params.arrays()
    state = AdamState.zeros_like(arrays)
    best = params.copy()
    best_val = np.inf
    stale = 0
    L = model_config.mc_samples_train
    kx, kc = model_config.latent_x, model_config.latent_c

    for epoch in range(1, train_config.max_epochs + 1):
        t0 = time.perf_counter()
        rng = epoch_rng(train_config.seed, epoch)
        parts = []
        for b, idx in enumerate(minibatch_iter(len(train_set), train_config.batch_size, rng)):
            x, c = train_set.X[idx], train_set.C[idx]
            eps_x = rng.standard_normal((L, len(idx), kx))
            eps_c = rng.standard_normal((L, len(idx), kc))
            try:
                breakdown, cache = loss_forward(params, x, c, eps_x, eps_c, model_config)
            except NonFiniteLossError as exc:
                raise NonFiniteLossError(exc.term, f"epoch {epoch}, batch {b}") from exc
            grads = loss_backward(params, cache)
            adam_step(state, arrays, grads.arrays(), train_config)
            parts.append((len(idx), breakdown))
        try:
            val = evaluate_loss(params, val_set, model_config)
        except NonFiniteLossError as exc:
            raise NonFiniteLossError(exc.term, f"epoch {epoch}, validation") from exc
        history.records.append(EpochRecord(epoch, _weighted_mean(parts), val, time.perf_counter() - t0))
        log.debug("epoch %d train %.6g val %.6g", epoch, history.records[-1].train.total, val.total)
        if val.total < best_val:
            best_val = val.total
            best = params.copy()
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= train_config.patience:
                history.stopped_early = True
                break
    return best, history
