"""Contextual-corruption robustness protocol.

A threshold is calibrated so that a target fraction (default 1%) of the clean
test set is flagged. A fixed sample of normal rows is then corrupted by
element-wise ``v' = scale * v + offset`` on randomly chosen behavioral and/or
contextual columns, and the flagged rows are counted per corruption spec.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .data.dataset import PreparedDataset
from .model import JlvaeParams
from .scoring import ScoreMethod, calibrate_threshold, classify, score


@dataclass
class CorruptionSpec:
    name: str
    n_behavioral: int
    n_contextual: int
    scale_low: float = -2.5
    scale_high: float = 2.5
    offset_low: float = -2.0
    offset_high: float = 2.0
    n_rows: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.n_behavioral < 0 or self.n_contextual < 0:
            raise ValueError("attribute counts must be >= 0")
        if self.scale_low > self.scale_high or self.offset_low > self.offset_high:
            raise ValueError("low must not exceed high")

    def check_dims(self, dim_x: int, dim_c: int) -> None:
        if self.n_behavioral > dim_x or self.n_contextual > dim_c:
            raise ValueError(
                f"spec {self.name} asks for {self.n_behavioral}/{self.n_contextual} columns, "
                f"data has {dim_x}/{dim_c}"
            )


@dataclass
class RobustnessRow:
    name: str
    n_behavioral_transformed: int
    n_contextual_transformed: int
    anomalies_reported: int


def _perturb(block: np.ndarray, cols: np.ndarray, spec: CorruptionSpec, rng: np.random.Generator) -> np.ndarray:
    out = block.copy()
    n = block.shape[0]
    # draw for every column so nested column subsets see identical noise
    scale = rng.uniform(spec.scale_low, spec.scale_high, size=(n, block.shape[1]))
    offset = rng.uniform(spec.offset_low, spec.offset_high, size=(n, block.shape[1]))
    out[:, cols] = scale[:, cols] * block[:, cols] + offset[:, cols]
    return out


def corrupt_columns(
    X: np.ndarray, C: np.ndarray, x_cols, c_cols, spec: CorruptionSpec, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Corrupt the given columns; untouched columns are returned bit-identical."""
    x_cols = np.asarray(x_cols, dtype=np.int64)
    c_cols = np.asarray(c_cols, dtype=np.int64)
    X2 = _perturb(X, x_cols, spec, rng)
    C2 = _perturb(C, c_cols, spec, rng)
    return X2, C2


def choose_columns(spec: CorruptionSpec, dim_x: int, dim_c: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    spec.check_dims(dim_x, dim_c)
    x_cols = np.sort(rng.choice(dim_x, spec.n_behavioral, replace=False))
    c_cols = np.sort(rng.choice(dim_c, spec.n_contextual, replace=False))
    return x_cols, c_cols


def corrupt(X: np.ndarray, C: np.ndarray, spec: CorruptionSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Pick the spec's columns uniformly without replacement, then corrupt them."""
    x_cols, c_cols = choose_columns(spec, X.shape[1], C.shape[1], rng)
    return corrupt_columns(X, C, x_cols, c_cols, spec, rng)


def _ceil_frac(frac: float, dim: int) -> int:
    return min(dim, math.ceil(round(frac * dim, 9)))


def paper_specs(dim_x: int, dim_c: int, n_rows: int = 10_000, seed: int = 0) -> list[CorruptionSpec]:
    """The fifteen corruption sets.

    A/B/C transform about 10%/30%/50% of each group (rounded up): suffix 1 touches
    behavioral columns only, 2 contextual only, 3 both. D/E/F transform 2/5/10
    columns of one group (suffix x or c), capped at the group size.
    """
    specs = []
    for group, frac in (("A", 0.1), ("B", 0.3), ("C", 0.5)):
        nb, nc = _ceil_frac(frac, dim_x), _ceil_frac(frac, dim_c)
        specs += [
            (f"{group}1", nb, 0),
            (f"{group}2", 0, nc),
            (f"{group}3", nb, nc),
        ]
    for group, count in (("D", 2), ("E", 5), ("F", 10)):
        specs += [(f"{group}x", min(count, dim_x), 0), (f"{group}c", 0, min(count, dim_c))]
    return [CorruptionSpec(name, nb, nc, n_rows=n_rows, seed=seed + i) for i, (name, nb, nc) in enumerate(specs)]


@dataclass
class ProtocolResult:
    threshold: float
    clean_flagged: int
    sample_rows: np.ndarray
    rows: list[RobustnessRow]

    def by_name(self) -> dict[str, int]:
        return {r.name: r.anomalies_reported for r in self.rows}

    def write_csv(self, path: os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["name", "n_behavioral_transformed", "n_contextual_transformed", "anomalies_reported"])
            for r in self.rows:
                w.writerow([r.name, r.n_behavioral_transformed, r.n_contextual_transformed, r.anomalies_reported])


def sample_normals(
    test_set: PreparedDataset, n_rows: int, seed: int, unflagged: Optional[np.ndarray] = None
) -> np.ndarray:
    """Seeded sample of rows that are labelled normal (when labels exist) and,
    if ``unflagged`` is given, classified normal on the clean data."""
    keep = np.ones(len(test_set), dtype=bool)
    if test_set.labels is not None:
        keep &= ~test_set.labels
    if unflagged is not None:
        keep &= unflagged
    normal = np.flatnonzero(keep)
    if len(normal) < n_rows:
        raise ValueError(f"need {n_rows} normal rows, test set has {len(normal)}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x5A4D])))
    return np.sort(rng.choice(normal, n_rows, replace=False))


def run_protocol(
    params: JlvaeParams,
    test_set: PreparedDataset,
    specs: Sequence[CorruptionSpec],
    target_rate: float = 0.01,
    n_rows: Optional[int] = None,
    seed: int = 0,
    method: ScoreMethod = ScoreMethod.RECON_ERROR,
    exclude_flagged: bool = True,
) -> ProtocolResult:
    """Calibrate on the clean test set, then count flags for each corrupted copy
    of one shared sample of normal rows.

    By default the sample excludes rows the clean threshold already flags, so a
    corruption that changes nothing reports zero anomalies.
    """
    if not specs:
        raise ValueError("no corruption specs given")
    n_rows = n_rows if n_rows is not None else specs[0].n_rows
    clean = score(params, test_set.X, test_set.C, method, seed=seed)
    threshold = calibrate_threshold(clean, target_rate)
    clean_flags = classify(clean, threshold)
    rows_idx = sample_normals(test_set, n_rows, seed, ~clean_flags if exclude_flagged else None)
    X, C = test_set.X[rows_idx], test_set.C[rows_idx]
    clean_flagged = int(clean_flags[rows_idx].sum())
    rows = []
    for spec in specs:
        spec.check_dims(X.shape[1], C.shape[1])
        rng = np.random.Generator(np.random.PCG64(spec.seed))
        X2, C2 = corrupt(X, C, spec, rng)
        flags = classify(score(params, X2, C2, method, seed=seed), threshold)
        rows.append(RobustnessRow(spec.name, spec.n_behavioral, spec.n_contextual, int(flags.sum())))
    return ProtocolResult(threshold, clean_flagged, rows_idx, rows)


def spec_to_dict(spec: CorruptionSpec) -> dict:
    return asdict(spec)
