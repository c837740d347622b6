from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..numerics import ShapeError


@dataclass
class PreparedDataset:
    """Behavioral block ``X``, contextual block ``C`` and optional anomaly labels."""

    X: np.ndarray
    C: np.ndarray
    labels: Optional[np.ndarray] = None
    row_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.C = np.asarray(self.C, dtype=np.float64)
        n = self.X.shape[0]
        if self.X.ndim != 2 or self.C.ndim != 2:
            raise ShapeError("dataset blocks", "2-D", (self.X.shape, self.C.shape))
        if self.C.shape[0] != n:
            raise ShapeError("C rows", n, self.C.shape[0])
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=bool)
            if self.labels.shape != (n,):
                raise ShapeError("labels", (n,), self.labels.shape)
        if self.row_ids is None:
            self.row_ids = np.arange(n, dtype=np.int64)
        else:
            self.row_ids = np.asarray(self.row_ids, dtype=np.int64)
            if self.row_ids.shape != (n,):
                raise ShapeError("row_ids", (n,), self.row_ids.shape)

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def dim_x(self) -> int:
        return self.X.shape[1]

    @property
    def dim_c(self) -> int:
        return self.C.shape[1]

    def subset(self, idx) -> "PreparedDataset":
        idx = np.asarray(idx)
        return PreparedDataset(
            self.X[idx],
            self.C[idx],
            None if self.labels is None else self.labels[idx],
            self.row_ids[idx],
        )

    def fingerprint(self) -> dict:
        out = {"rows": len(self), "dim_x": self.dim_x, "dim_c": self.dim_c}
        if self.labels is not None:
            out["anomalies"] = int(self.labels.sum())
            out["normals"] = int((~self.labels).sum())
        return out
