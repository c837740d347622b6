"""Prepared-dataset directories: manifest.json, X.csv, C.csv, labels.csv.

Matrices are written with 17 significant digits, so reloading is value-exact
and rewriting identical data produces byte-identical files.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from .dataset import PreparedDataset

FLOAT_FMT = "%.17g"
RAW_RECORDS = "raw.csv"


def _write_matrix(path: Path, m: np.ndarray, names: Optional[list[str]]) -> None:
    cols = names if names is not None else [f"f{j}" for j in range(m.shape[1])]
    pd.DataFrame(m, columns=cols).to_csv(path, index=False, float_format=FLOAT_FMT, lineterminator="\n")


def _read_matrix(path: Path) -> tuple[np.ndarray, list[str]]:
    df = pd.read_csv(path, float_precision="round_trip", dtype=np.float64)
    return df.to_numpy(dtype=np.float64), list(df.columns)


def save_dataset(
    out_dir: os.PathLike,
    ds: PreparedDataset,
    manifest: Optional[dict] = None,
    x_names: Optional[list[str]] = None,
    c_names: Optional[list[str]] = None,
) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_matrix(out / "X.csv", ds.X, x_names)
    _write_matrix(out / "C.csv", ds.C, c_names)
    lab = {"row_id": ds.row_ids}
    if ds.labels is not None:
        lab["label"] = ds.labels.astype(np.int64)
    pd.DataFrame(lab).to_csv(out / "labels.csv", index=False, lineterminator="\n")
    doc = dict(manifest or {})
    doc.setdefault("widths", {"dim_x": ds.dim_x, "dim_c": ds.dim_c})
    doc.setdefault("counts", ds.fingerprint())
    with open(out / "manifest.json", "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return out


def load_manifest(data_dir: os.PathLike) -> dict:
    path = Path(data_dir) / "manifest.json"
    if not path.exists():
        return {}
    with open(path) as fh:
        return json.load(fh)


def load_dataset(data_dir: os.PathLike) -> PreparedDataset:
    d = Path(data_dir)
    X, _ = _read_matrix(d / "X.csv")
    C, _ = _read_matrix(d / "C.csv")
    lab = pd.read_csv(d / "labels.csv")
    labels = lab["label"].to_numpy().astype(bool) if "label" in lab.columns else None
    return PreparedDataset(X, C, labels, lab["row_id"].to_numpy(dtype=np.int64))
