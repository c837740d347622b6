"""Joint latent VAE: two recognizer/generator pairs cross-linked through z_c.

Layout of the four networks::

    recognizer_x : x            -> [mu_x, log_var_x]   (2 * latent_x)
    recognizer_c : [x, c]       -> [mu_c, log_var_c]   (2 * latent_c)
    generator_x  : [z_x, z_c]   -> x_hat               (dim_x)
    generator_c  : z_c          -> c_hat               (dim_c)

Context reaches the behavioral generator only through its latent z_c.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Iterator, Optional

import numpy as np

from .numerics import (
    Activation,
    LayerGrad,
    Mlp,
    MlpCache,
    MlpLayer,
    ShapeError,
    StaleCacheError,
    mlp_backward,
    mlp_forward,
)

LOG_VAR_CLAMP = 10.0
NETWORKS = ("recognizer_x", "recognizer_c", "generator_x", "generator_c")


class ReconLoss(str, Enum):
    L2_NORM = "l2norm"
    SQUARED_L2 = "squared_l2"


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str, where: str = ""):
        self.term = term
        self.where = where
        msg = f"non-finite loss in term '{term}'"
        if where:
            msg += f" ({where})"
        super().__init__(msg)


@dataclass
class ModelConfig:
    dim_x: int
    dim_c: int
    latent_x: int
    latent_c: int
    recognizer_x_hidden: list[int] = field(default_factory=list)
    recognizer_c_hidden: list[int] = field(default_factory=list)
    generator_x_hidden: list[int] = field(default_factory=list)
    generator_c_hidden: list[int] = field(default_factory=list)
    l1_lambda: float = 1e-5
    mc_samples_train: int = 1
    recon_loss: ReconLoss = ReconLoss.L2_NORM

    def __post_init__(self):
        self.recon_loss = ReconLoss(self.recon_loss)
        self.recognizer_x_hidden = list(self.recognizer_x_hidden)
        self.recognizer_c_hidden = list(self.recognizer_c_hidden)
        self.generator_x_hidden = list(self.generator_x_hidden)
        self.generator_c_hidden = list(self.generator_c_hidden)
        counts = [self.dim_x, self.dim_c, self.latent_x, self.latent_c, self.mc_samples_train]
        counts += self.recognizer_x_hidden + self.recognizer_c_hidden
        counts += self.generator_x_hidden + self.generator_c_hidden
        if any(int(n) < 1 for n in counts):
            raise ValueError("all ModelConfig counts must be >= 1")
        if self.l1_lambda < 0:
            raise ValueError("l1_lambda must be >= 0")

    def widths(self) -> dict[str, list[int]]:
        return {
            "recognizer_x": [self.dim_x, *self.recognizer_x_hidden, 2 * self.latent_x],
            "recognizer_c": [self.dim_x + self.dim_c, *self.recognizer_c_hidden, 2 * self.latent_c],
            "generator_x": [self.latent_x + self.latent_c, *self.generator_x_hidden, self.dim_x],
            "generator_c": [self.latent_c, *self.generator_c_hidden, self.dim_c],
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["recon_loss"] = self.recon_loss.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def with_dims(self, dim_x: int, dim_c: int) -> "ModelConfig":
        d = self.to_dict()
        d.update(dim_x=dim_x, dim_c=dim_c)
        return ModelConfig.from_dict(d)


def kdd99_config(dim_x: int = 65, dim_c: int = 45, **overrides) -> ModelConfig:
    """Network layout used for the KDD Cup 99 experiment (mirrored generators)."""
    kw = dict(
        dim_x=dim_x,
        dim_c=dim_c,
        latent_x=4,
        latent_c=4,
        recognizer_x_hidden=[58, 32],
        recognizer_c_hidden=[40, 22],
        generator_x_hidden=[32, 58],
        generator_c_hidden=[22, 40],
        l1_lambda=1e-5,
    )
    kw.update(overrides)
    return ModelConfig(**kw)


def plant_synth_config(dim_x: int = 28, dim_c: int = 38, **overrides) -> ModelConfig:
    """Plant-like layout for the synthetic stand-in.

    Hidden widths follow the per-pump plant networks. The synthetic data is
    z-scored, so the reconstruction term defaults to the squared error of a
    unit-variance Gaussian; the plain norm lets the KL term shut both latents
    off on data at this scale.
    """
    kw = dict(
        dim_x=dim_x,
        dim_c=dim_c,
        latent_x=5,
        latent_c=2,
        recognizer_x_hidden=[20, 10],
        recognizer_c_hidden=[20, 10],
        generator_x_hidden=[10, 20],
        generator_c_hidden=[4, 7],
        l1_lambda=1e-5,
        recon_loss=ReconLoss.SQUARED_L2,
    )
    kw.update(overrides)
    return ModelConfig(**kw)


PRESETS = {"kdd99": kdd99_config, "plant_synth": plant_synth_config}


@dataclass
class JlvaeParams:
    recognizer_x: Mlp
    recognizer_c: Mlp
    generator_x: Mlp
    generator_c: Mlp

    def networks(self) -> Iterator[tuple[str, Mlp]]:
        for name in NETWORKS:
            yield name, getattr(self, name)

    def arrays(self) -> list[np.ndarray]:
        """Every parameter array in canonical order (weights then bias per layer)."""
        out = []
        for _, mlp in self.networks():
            for layer in mlp.layers:
                out.append(layer.weights)
                out.append(layer.bias)
        return out

    def copy(self) -> "JlvaeParams":
        return JlvaeParams(*(mlp.copy() for _, mlp in self.networks()))

    def l1_norm(self) -> float:
        return float(sum(np.abs(layer.weights).sum() for _, m in self.networks() for layer in m.layers))


@dataclass
class GaussianLatent:
    mu: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        if self.mu.shape != self.log_var.shape:
            raise ShapeError("log_var", self.mu.shape, self.log_var.shape)


@dataclass
class LossBreakdown:
    kl_zx: float
    kl_zc: float
    recon_x: float
    recon_c: float
    l1: float
    total: float

    TERMS = ("kl_zx", "kl_zc", "recon_x", "recon_c", "l1", "total")

    def as_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in self.TERMS}


def _build_mlp(widths: list[int], rng: np.random.Generator) -> Mlp:
    layers = []
    for i in range(len(widths) - 1):
        fan_in, fan_out = widths[i], widths[i + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        act = Activation.LINEAR if i == len(widths) - 2 else Activation.RELU
        layers.append(
            MlpLayer(rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out), act)
        )
    return Mlp(layers)


def init_params(config: ModelConfig, seed: int) -> JlvaeParams:
    """Glorot-uniform weights, zero biases; hidden layers ReLU, heads linear."""
    rng = np.random.Generator(np.random.PCG64(seed))
    widths = config.widths()
    return JlvaeParams(*(_build_mlp(widths[name], rng) for name in NETWORKS))


def zero_params(config: ModelConfig) -> JlvaeParams:
    params = init_params(config, 0)
    for arr in params.arrays():
        arr[...] = 0.0
    return params


def _check_cols(what: str, m: np.ndarray, cols: int):
    if m.ndim != 2 or m.shape[1] != cols:
        raise ShapeError(what, ("N", cols), m.shape)


def _split_head(out: np.ndarray) -> GaussianLatent:
    k = out.shape[1] // 2
    log_var = np.clip(out[:, k:], -LOG_VAR_CLAMP, LOG_VAR_CLAMP)
    return GaussianLatent(out[:, :k].copy(), log_var)


def encode_behavioral(params: JlvaeParams, x: np.ndarray) -> GaussianLatent:
    _check_cols("x", x, params.recognizer_x.in_dim)
    out, _ = mlp_forward(params.recognizer_x, x)
    return _split_head(out)


def encode_contextual(params: JlvaeParams, x: np.ndarray, c: np.ndarray) -> GaussianLatent:
    if x.shape[0] != c.shape[0]:
        raise ShapeError("c rows", x.shape[0], c.shape[0])
    _check_cols("[x, c]", np.empty((0, x.shape[1] + c.shape[1])), params.recognizer_c.in_dim)
    out, _ = mlp_forward(params.recognizer_c, np.hstack([x, c]))
    return _split_head(out)


def reparameterize(latent: GaussianLatent, eps: np.ndarray) -> np.ndarray:
    if eps.shape != latent.mu.shape:
        raise ShapeError("eps", latent.mu.shape, eps.shape)
    return latent.mu + np.exp(0.5 * latent.log_var) * eps


def decode_contextual(params: JlvaeParams, z_c: np.ndarray) -> np.ndarray:
    _check_cols("z_c", z_c, params.generator_c.in_dim)
    return mlp_forward(params.generator_c, z_c)[0]


def decode_behavioral(params: JlvaeParams, z_x: np.ndarray, z_c: np.ndarray) -> np.ndarray:
    if z_x.shape[0] != z_c.shape[0]:
        raise ShapeError("z_c rows", z_x.shape[0], z_c.shape[0])
    z = np.hstack([z_x, z_c])
    _check_cols("[z_x, z_c]", z, params.generator_x.in_dim)
    return mlp_forward(params.generator_x, z)[0]


def kl_rows(latent: GaussianLatent) -> np.ndarray:
    """KL(q || N(0, I)) for each row."""
    lv = latent.log_var
    return 0.5 * np.sum(np.exp(lv) + latent.mu**2 - 1.0 - lv, axis=1)


def kl_std_normal(latent: GaussianLatent) -> float:
    return float(np.mean(kl_rows(latent)))


def recon_rows(target: np.ndarray, recon: np.ndarray, kind: ReconLoss) -> np.ndarray:
    diff = target - recon
    if ReconLoss(kind) is ReconLoss.L2_NORM:
        return np.sqrt(np.sum(diff * diff, axis=1))
    return 0.5 * np.sum(diff * diff, axis=1)


def _recon_grad(target: np.ndarray, recon: np.ndarray, kind: ReconLoss) -> np.ndarray:
    """d recon_rows / d recon, per row."""
    diff = recon - target
    if kind is ReconLoss.SQUARED_L2:
        return diff
    norm = np.sqrt(np.sum(diff * diff, axis=1, keepdims=True))
    safe = np.where(norm > 0.0, norm, 1.0)
    return np.where(norm > 0.0, diff / safe, 0.0)


def _as_samples(eps: np.ndarray, n: int, k: int) -> np.ndarray:
    eps = np.asarray(eps, dtype=np.float64)
    if eps.ndim == 2:
        eps = eps[None]
    if eps.ndim != 3 or eps.shape[1:] != (n, k):
        raise ShapeError("eps", ("L", n, k), eps.shape)
    return eps


@dataclass
class LossCache:
    params_id: int
    config: ModelConfig
    x: np.ndarray
    c: np.ndarray
    raw_x: np.ndarray  # unclamped recognizer heads
    raw_c: np.ndarray
    qx: GaussianLatent
    qc: GaussianLatent
    rx_cache: MlpCache
    rc_cache: MlpCache
    eps_x: np.ndarray  # (L, N, latent_x)
    eps_c: np.ndarray
    samples: list[tuple]  # per MC sample: (z_x, z_c, x_hat, gx_cache, c_hat, gc_cache)


def loss_forward(
    params: JlvaeParams,
    x: np.ndarray,
    c: np.ndarray,
    eps_x: np.ndarray,
    eps_c: np.ndarray,
    config: ModelConfig,
) -> tuple[LossBreakdown, LossCache]:
    """Batch-mean joint objective (negative bound plus L1 on weights).

    ``eps_x``/``eps_c`` are standard-normal draws of shape (N, k) or (L, N, k);
    the reconstruction terms are averaged over the L samples.
    """
    _check_cols("x", x, config.dim_x)
    _check_cols("c", c, config.dim_c)
    n = x.shape[0]
    if c.shape[0] != n:
        raise ShapeError("c rows", n, c.shape[0])
    eps_x = _as_samples(eps_x, n, config.latent_x)
    eps_c = _as_samples(eps_c, n, config.latent_c)
    if eps_x.shape[0] != eps_c.shape[0]:
        raise ShapeError("eps_c samples", eps_x.shape[0], eps_c.shape[0])

    raw_x, rx_cache = mlp_forward(params.recognizer_x, x)
    raw_c, rc_cache = mlp_forward(params.recognizer_c, np.hstack([x, c]))
    qx, qc = _split_head(raw_x), _split_head(raw_c)

    kind = config.recon_loss
    samples = []
    rec_x = np.zeros(n)
    rec_c = np.zeros(n)
    for ex, ec in zip(eps_x, eps_c):
        z_x = reparameterize(qx, ex)
        z_c = reparameterize(qc, ec)
        x_hat, gx_cache = mlp_forward(params.generator_x, np.hstack([z_x, z_c]))
        c_hat, gc_cache = mlp_forward(params.generator_c, z_c)
        rec_x += recon_rows(x, x_hat, kind)
        rec_c += recon_rows(c, c_hat, kind)
        samples.append((z_x, z_c, x_hat, gx_cache, c_hat, gc_cache))
    n_samples = len(samples)

    terms = {
        "kl_zx": kl_std_normal(qx),
        "kl_zc": kl_std_normal(qc),
        "recon_x": float(np.mean(rec_x)) / n_samples,
        "recon_c": float(np.mean(rec_c)) / n_samples,
        "l1": config.l1_lambda * params.l1_norm(),
    }
    for name, value in terms.items():
        if not np.isfinite(value):
            raise NonFiniteLossError(name)
    total = sum(terms.values())
    if not np.isfinite(total):
        raise NonFiniteLossError("total")
    cache = LossCache(
        id(params), config, x, c, raw_x, raw_c, qx, qc, rx_cache, rc_cache, eps_x, eps_c, samples
    )
    return LossBreakdown(total=total, **terms), cache


@dataclass
class JlvaeGrads:
    """Gradients laid out exactly like ``JlvaeParams``."""

    recognizer_x: list[LayerGrad]
    recognizer_c: list[LayerGrad]
    generator_x: list[LayerGrad]
    generator_c: list[LayerGrad]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for name in NETWORKS:
            for g in getattr(self, name):
                out.append(g.weights)
                out.append(g.bias)
        return out


def _head_grad(latent: GaussianLatent, raw: np.ndarray, d_mu: np.ndarray, d_lv: np.ndarray) -> np.ndarray:
    k = latent.mu.shape[1]
    raw_lv = raw[:, k:]
    # clamp passes gradient only inside the range
    inside = (raw_lv >= -LOG_VAR_CLAMP) & (raw_lv <= LOG_VAR_CLAMP)
    return np.hstack([d_mu, d_lv * inside])


def loss_backward(params: JlvaeParams, cache: LossCache) -> JlvaeGrads:
    """Exact gradient of ``LossBreakdown.total`` for the cached forward pass."""
    if cache.params_id != id(params):
        raise StaleCacheError("loss cache belongs to a different parameter set")
    config = cache.config
    kind = config.recon_loss
    n = cache.x.shape[0]
    n_samples = len(cache.samples)
    qx, qc = cache.qx, cache.qc
    kx = config.latent_x

    # KL: d/dmu = mu, d/dlv = 0.5 (exp(lv) - 1), batch mean
    d_mu_x = qx.mu / n
    d_lv_x = 0.5 * (np.exp(qx.log_var) - 1.0) / n
    d_mu_c = qc.mu / n
    d_lv_c = 0.5 * (np.exp(qc.log_var) - 1.0) / n

    gx_acc = None
    gc_acc = None
    sd_x = np.exp(0.5 * qx.log_var)
    sd_c = np.exp(0.5 * qc.log_var)
    scale = 1.0 / (n * n_samples)
    for (z_x, z_c, x_hat, gx_cache, c_hat, gc_cache), ex, ec in zip(
        cache.samples, cache.eps_x, cache.eps_c
    ):
        g_xhat = _recon_grad(cache.x, x_hat, kind) * scale
        g_chat = _recon_grad(cache.c, c_hat, kind) * scale
        gx_layers, g_z = mlp_backward(params.generator_x, gx_cache, g_xhat)
        gc_layers, g_zc_from_c = mlp_backward(params.generator_c, gc_cache, g_chat)
        g_zx = g_z[:, :kx]
        g_zc = g_z[:, kx:] + g_zc_from_c  # cross-link path plus context path
        d_mu_x = d_mu_x + g_zx
        d_lv_x = d_lv_x + g_zx * ex * 0.5 * sd_x
        d_mu_c = d_mu_c + g_zc
        d_lv_c = d_lv_c + g_zc * ec * 0.5 * sd_c
        gx_acc = gx_layers if gx_acc is None else _add_layers(gx_acc, gx_layers)
        gc_acc = gc_layers if gc_acc is None else _add_layers(gc_acc, gc_layers)

    rx_layers, _ = mlp_backward(
        params.recognizer_x, cache.rx_cache, _head_grad(qx, cache.raw_x, d_mu_x, d_lv_x)
    )
    rc_layers, _ = mlp_backward(
        params.recognizer_c, cache.rc_cache, _head_grad(qc, cache.raw_c, d_mu_c, d_lv_c)
    )
    grads = JlvaeGrads(rx_layers, rc_layers, gx_acc, gc_acc)

    lam = config.l1_lambda
    if lam > 0:
        for name in NETWORKS:
            for layer, g in zip(getattr(params, name).layers, getattr(grads, name)):
                g.weights = g.weights + lam * np.sign(layer.weights)
    return grads


def _add_layers(a: list[LayerGrad], b: list[LayerGrad]) -> list[LayerGrad]:
    return [LayerGrad(p.weights + q.weights, p.bias + q.bias) for p, q in zip(a, b)]


def posterior_means(params: JlvaeParams, x: np.ndarray, c: np.ndarray) -> tuple[GaussianLatent, GaussianLatent]:
    return encode_behavioral(params, x), encode_contextual(params, x, c)


def reconstruct(
    params: JlvaeParams, x: np.ndarray, c: np.ndarray, eps: Optional[tuple[np.ndarray, np.ndarray]] = None
) -> tuple[np.ndarray, np.ndarray]:
    """(x_hat, c_hat); uses the posterior means unless ``eps`` is given."""
    qx, qc = posterior_means(params, x, c)
    if eps is None:
        z_x, z_c = qx.mu, qc.mu
    else:
        z_x, z_c = reparameterize(qx, eps[0]), reparameterize(qc, eps[1])
    return decode_behavioral(params, z_x, z_c), decode_contextual(params, z_c)
