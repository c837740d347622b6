"""Synthetic contextual data drawn from the two-latent generative model.

    z_x ~ N(0, I),  z_c ~ N(0, I)
    c = A z_c + noise_c
    x = B z_x + D z_c + noise_x

Anomalous rows keep their own ``c`` but their ``x`` is generated from an
independent z_c draw, so the behavior is inconsistent with the context while
still being marginally plausible. Columns are min-max scaled to [0, 1] by
default; ``scaling="standard"`` z-scores them instead (zero mean, unit variance),
which is what the plant preset uses.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .dataset import PreparedDataset


def _minmax(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lo, hi = m.min(axis=0), m.max(axis=0)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (m - lo) / safe, 0.0), lo, hi


def _standard(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (z-scored, mean, std); constant columns map to 0."""
    mean, sd = m.mean(axis=0), m.std(axis=0)
    safe = np.where(sd > 0, sd, 1.0)
    return np.where(sd > 0, (m - mean) / safe, 0.0), mean, sd


SCALINGS = {"minmax": _minmax, "standard": _standard}


@dataclass
class SynthSpec:
    n_samples: int = 10_000
    latent_x: int = 5
    latent_c: int = 2
    dim_x: int = 28
    dim_c: int = 10
    noise_x: float = 0.1
    noise_c: float = 0.1
    coupling: float = 1.0  # scale of D, the z_c -> x loading
    anomaly_fraction: float = 0.0
    anomaly_shift: float = 0.0  # extra offset added to anomalous z_c draws
    scaling: str = "minmax"  # or "standard"

    def __post_init__(self):
        for name in ("n_samples", "latent_x", "latent_c", "dim_x", "dim_c"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"SynthSpec.{name} must be >= 1")
        if not 0.0 <= self.anomaly_fraction <= 1.0:
            raise ValueError("anomaly_fraction must be in [0, 1]")
        if self.scaling not in SCALINGS:
            raise ValueError(f"scaling must be one of {sorted(SCALINGS)}")
        if self.noise_x < 0 or self.noise_c < 0:
            raise ValueError("noise scales must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


PLANT_SYNTH = SynthSpec(
    n_samples=60_000,
    latent_x=5,
    latent_c=2,
    dim_x=28,
    dim_c=38,
    noise_x=1.0,
    noise_c=3.0,
    coupling=0.5,
    anomaly_fraction=0.01,
    scaling="standard",
)


@dataclass
class SynthTruth:
    z_x: np.ndarray
    z_c: np.ndarray
    A: np.ndarray  # dim_c x latent_c
    B: np.ndarray  # dim_x x latent_x
    D: np.ndarray  # dim_x x latent_c
    anomalies: np.ndarray  # sorted row indices
    # scaling statistics: (min, max) for minmax, (mean, std) for standard
    x_lo: np.ndarray
    x_hi: np.ndarray
    c_lo: np.ndarray
    c_hi: np.ndarray


def synth_generate(spec: SynthSpec, seed: int, mixing: Optional[int] = None) -> tuple[PreparedDataset, SynthTruth]:
    """Draw a labelled dataset and its ground-truth latents.

    ``mixing`` seeds the loading matrices separately from the samples, so a train
    and a test set can share one generative process (defaults to ``seed``).
    """
    spec = SynthSpec(**asdict(spec))
    n = spec.n_samples
    mix_rng = np.random.Generator(np.random.PCG64(seed if mixing is None else mixing))
    A = mix_rng.standard_normal((spec.dim_c, spec.latent_c))
    B = mix_rng.standard_normal((spec.dim_x, spec.latent_x))
    D = spec.coupling * mix_rng.standard_normal((spec.dim_x, spec.latent_c))

    rng = np.random.Generator(np.random.PCG64(seed))
    z_x = rng.standard_normal((n, spec.latent_x))
    z_c = rng.standard_normal((n, spec.latent_c))
    c = z_c @ A.T + spec.noise_c * rng.standard_normal((n, spec.dim_c))

    n_anom = int(round(n * spec.anomaly_fraction))
    anomalies = np.sort(rng.permutation(n)[:n_anom])
    z_c_for_x = z_c.copy()
    decoy = rng.standard_normal((n_anom, spec.latent_c))
    if spec.anomaly_shift:
        decoy += spec.anomaly_shift * np.sign(decoy)
    z_c_for_x[anomalies] = decoy
    x = z_x @ B.T + z_c_for_x @ D.T + spec.noise_x * rng.standard_normal((n, spec.dim_x))

    rescale = SCALINGS[spec.scaling]
    xs, x_lo, x_hi = rescale(x)
    cs, c_lo, c_hi = rescale(c)
    labels = np.zeros(n, dtype=bool)
    labels[anomalies] = True
    truth = SynthTruth(z_x, z_c, A, B, D, anomalies, x_lo, x_hi, c_lo, c_hi)
    return PreparedDataset(xs, cs, labels), truth


# noise-free, low-rank linear data: a sanity target the model can fit almost exactly
LINEAR_SANITY = SynthSpec(
    n_samples=2_000,
    latent_x=2,
    latent_c=2,
    dim_x=28,
    dim_c=38,
    noise_x=0.0,
    noise_c=0.0,
    scaling="standard",
)
