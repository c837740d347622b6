"""Per-observation anomaly scores (higher = more anomalous) and thresholding.

Two scores are available:

* ``recon_error_score``: ||x - x_hat|| with both latents at their posterior means.
* ``recon_probability_score``: negative Monte Carlo estimate of
  E_q[log N(x | x_hat, I)]. With the unit-variance likelihood this equals
  0.5 * mean squared reconstruction norm + (dim_x / 2) log(2 pi), an affine
  function of the sampled squared error.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import pandas as pd

from .model import (
    JlvaeParams,
    decode_behavioral,
    encode_behavioral,
    encode_contextual,
    reparameterize,
)

LOG_2PI = math.log(2.0 * math.pi)


class ScoreMethod(str, Enum):
    RECON_ERROR = "recon_error"
    RECON_PROBABILITY = "recon_probability"


@dataclass
class ScoreReport:
    scores: np.ndarray
    method: ScoreMethod
    threshold: Optional[float] = None
    flags: Optional[np.ndarray] = None
    row_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        self.method = ScoreMethod(self.method)
        if self.threshold is not None and self.flags is None:
            self.flags = classify(self.scores, self.threshold)

    def write(self, csv_path: os.PathLike, extra: Optional[dict] = None) -> None:
        """Score CSV (row_id, score, flagged) plus a ``.json`` sidecar."""
        n = len(self.scores)
        ids = self.row_ids if self.row_ids is not None else np.arange(n)
        flags = self.flags if self.flags is not None else np.zeros(n, dtype=bool)
        pd.DataFrame(
            {"row_id": ids, "score": self.scores, "flagged": flags.astype(np.int64)}
        ).to_csv(csv_path, index=False, float_format="%.17g", lineterminator="\n")
        side = {"method": self.method.value, "threshold": self.threshold, "n": n}
        side.update(extra or {})
        with open(str(csv_path) + ".json", "w") as fh:
            json.dump(side, fh, sort_keys=True, indent=1)
            fh.write("\n")


def recon_error_score(params: JlvaeParams, x: np.ndarray, c: np.ndarray) -> np.ndarray:
    qx = encode_behavioral(params, x)
    qc = encode_contextual(params, x, c)
    x_hat = decode_behavioral(params, qx.mu, qc.mu)
    return np.sqrt(np.sum((x - x_hat) ** 2, axis=1))


def row_rng(seed: int, row: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, row])))


def recon_probability_score(
    params: JlvaeParams, x: np.ndarray, c: np.ndarray, L: int = 10, seed: int = 0
) -> np.ndarray:
    """Negative mean log-likelihood of ``x`` under L posterior samples.

    Row ``i`` draws its noise from its own stream keyed by ``(seed, i)``.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    qx = encode_behavioral(params, x)
    qc = encode_contextual(params, x, c)
    n, kx = qx.mu.shape
    kc = qc.mu.shape[1]
    noise = np.empty((L, n, kx + kc))
    for i in range(n):
        noise[:, i, :] = row_rng(seed, i).standard_normal((L, kx + kc))
    d = x.shape[1]
    acc = np.zeros(n)
    for eps in noise:
        z_x = reparameterize(qx, eps[:, :kx])
        z_c = reparameterize(qc, eps[:, kx:])
        x_hat = decode_behavioral(params, z_x, z_c)
        acc += 0.5 * np.sum((x - x_hat) ** 2, axis=1)
    return acc / L + 0.5 * d * LOG_2PI


def score(params: JlvaeParams, x: np.ndarray, c: np.ndarray, method: ScoreMethod = ScoreMethod.RECON_ERROR,
          L: int = 10, seed: int = 0) -> np.ndarray:  # fmt: skip
    if ScoreMethod(method) is ScoreMethod.RECON_ERROR:
        return recon_error_score(params, x, c)
    return recon_probability_score(params, x, c, L=L, seed=seed)


def _target_count(n: int, target_rate: float) -> int:
    # round first so e.g. 100 * 0.07 = 7.000000000000001 still means 7
    return max(1, math.ceil(round(n * target_rate, 9)))


def calibrate_threshold(scores, target_rate: float) -> float:
    """The ceil(N * rate)-th largest score.

    With the strict ``score > threshold`` flag rule at most ceil(N * rate) - 1
    distinct scores exceed it; e.g. scores 1..100 at rate 0.05 give threshold 96
    and flag 97..100.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("scores must be nonempty")
    if not 0.0 < target_rate < 1.0:
        raise ValueError("target_rate must lie in (0, 1)")
    k = min(_target_count(scores.size, target_rate), scores.size)
    thr = float(np.sort(scores)[::-1][k - 1])
    if np.all(scores == scores[0]):
        warnings.warn("all scores are equal; the threshold flags nothing", RuntimeWarning, stacklevel=2)
    return thr


def classify(scores, threshold: float) -> np.ndarray:
    return np.asarray(scores, dtype=np.float64) > threshold
