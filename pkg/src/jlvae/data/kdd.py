"""KDD Cup 99 ingestion: parsing, label filtering and [0, 1] feature preparation.

Behavioral block: one-hot ``service`` followed by log1p-then-min-max ``duration``,
``src_bytes`` and ``dst_bytes``. Every other feature goes to the contextual block
(categoricals one-hot, numerics min-max). Category lists and min/max statistics
come from the training records only; unseen test categories encode as zeros and
out-of-range test values are clipped.
"""

from __future__ import annotations

import csv
import gzip
import logging
import os
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .dataset import PreparedDataset

log = logging.getLogger(__name__)

KDD_COLUMNS = (
    "duration", "protocol_type", "service", "flag", "src_bytes", "dst_bytes", "land",
    "wrong_fragment", "urgent", "hot", "num_failed_logins", "logged_in", "num_compromised",
    "root_shell", "su_attempted", "num_root", "num_file_creations", "num_shells",
    "num_access_files", "num_outbound_cmds", "is_host_login", "is_guest_login", "count",
    "srv_count", "serror_rate", "srv_serror_rate", "rerror_rate", "srv_rerror_rate",
    "same_srv_rate", "diff_srv_rate", "srv_diff_host_rate", "dst_host_count",
    "dst_host_srv_count", "dst_host_same_srv_rate", "dst_host_diff_srv_rate",
    "dst_host_same_src_port_rate", "dst_host_srv_diff_host_rate", "dst_host_serror_rate",
    "dst_host_srv_serror_rate", "dst_host_rerror_rate", "dst_host_srv_rerror_rate",
)  # fmt: skip
KDD_CATEGORICAL = frozenset({"protocol_type", "service", "flag"})
KDD_LOG_COLUMNS = ("duration", "src_bytes", "dst_bytes")
KDD_BEHAVIORAL = ("service", "duration", "src_bytes", "dst_bytes")
N_FIELDS = len(KDD_COLUMNS) + 1

R2L = ("ftp_write", "guess_passwd", "imap", "multihop", "phf", "spy", "warezclient", "warezmaster")
U2R = ("buffer_overflow", "loadmodule", "perl", "rootkit")
RETAINED_ATTACKS = frozenset(R2L + U2R + ("ipsweep", "nmap"))
NORMAL = "normal"
# remaining labels of the KDD Cup 99 training taxonomy (dos + other probes)
DROPPED_ATTACKS = frozenset({"back", "land", "neptune", "pod", "smurf", "teardrop", "portsweep", "satan"})

PAPER_TOTAL = 605_803
PAPER_NORMAL = 595_797
PAPER_ANOMALIES = 10_006


@dataclass
class RawRecord:
    values: tuple  # 41 typed fields: str for categoricals, float otherwise
    label: str

    @property
    def attack(self) -> str:
        return self.label.rstrip(".")


@dataclass
class ParseError:
    line: int
    reason: str


class KddFormatError(ValueError):
    def __init__(self, errors: list[ParseError]):
        self.errors = errors
        head = "; ".join(f"line {e.line}: {e.reason}" for e in errors[:5])
        super().__init__(f"{len(errors)} malformed KDD line(s): {head}")


def _open(path: os.PathLike):
    path = os.fspath(path)
    if path.endswith(".gz"):
        return gzip.open(path, "rt", newline="")
    return open(path, newline="")


_CAT_INDEX = frozenset(i for i, name in enumerate(KDD_COLUMNS) if name in KDD_CATEGORICAL)


def _typed(fields: Sequence[str]) -> tuple:
    return tuple(f if i in _CAT_INDEX else float(f) for i, f in enumerate(fields))


def iter_kdd_csv(path: os.PathLike, errors: Optional[list[ParseError]] = None) -> Iterator[RawRecord]:
    """Stream records; malformed lines are appended to ``errors`` (or raise at the end)."""
    collect = [] if errors is None else errors
    with _open(path) as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != N_FIELDS:
                collect.append(ParseError(lineno, f"expected {N_FIELDS} fields, got {len(row)}"))
                continue
            try:
                values = _typed([f.strip() for f in row[:-1]])
            except ValueError as exc:
                collect.append(ParseError(lineno, str(exc)))
                continue
            yield RawRecord(values, row[-1].strip())
    if errors is None and collect:
        raise KddFormatError(collect)


def parse_kdd_csv(path: os.PathLike) -> list[RawRecord]:
    """Parse a comma-separated, header-less KDD file (optionally gzipped).

    Raises ``KddFormatError`` listing every malformed line with its number.
    """
    return list(iter_kdd_csv(path))


class UnknownLabelPolicy(str, Enum):
    DROP = "drop"
    RAISE = "raise"


def is_retained(label: str) -> bool:
    name = label.rstrip(".")
    return name == NORMAL or name in RETAINED_ATTACKS


def filter_labels(
    records: Iterable[RawRecord], unknown: UnknownLabelPolicy = UnknownLabelPolicy.DROP
) -> list[RawRecord]:
    """Keep normal traffic plus r2l, u2r, ipsweep and nmap attacks."""
    kept = []
    unknown_seen: Counter = Counter()
    for rec in records:
        name = rec.attack
        if name == NORMAL or name in RETAINED_ATTACKS:
            kept.append(rec)
        elif name not in DROPPED_ATTACKS:
            unknown_seen[name] += 1
    if unknown_seen:
        if UnknownLabelPolicy(unknown) is UnknownLabelPolicy.RAISE:
            raise ValueError(f"unknown KDD labels: {dict(unknown_seen)}")
        log.warning("dropped records with unknown labels: %s", dict(unknown_seen))
    return kept


def anomaly_labels(records: Sequence[RawRecord]) -> np.ndarray:
    return np.array([rec.attack != NORMAL for rec in records], dtype=bool)


def label_counts(records: Iterable[RawRecord]) -> dict[str, int]:
    return dict(sorted(Counter(rec.attack for rec in records).items()))


def count_report(records: Sequence[RawRecord]) -> dict:
    """Retained counts against the published 605,803 / 595,797 / 10,006 split."""
    labels = anomaly_labels(records)
    total, anomalies = len(records), int(labels.sum())
    return {
        "total": total,
        "normal": total - anomalies,
        "anomalies": anomalies,
        "reference": {"total": PAPER_TOTAL, "normal": PAPER_NORMAL, "anomalies": PAPER_ANOMALIES},
        "rel_dev_total": (total - PAPER_TOTAL) / PAPER_TOTAL,
        "rel_dev_anomalies": (anomalies - PAPER_ANOMALIES) / PAPER_ANOMALIES,
        "per_label": label_counts(records),
    }


class Transform(str, Enum):
    LOG1P_MINMAX = "log1p_minmax"
    MINMAX = "minmax"
    ONEHOT = "onehot"


@dataclass
class ColumnSpec:
    name: str
    transform: Transform
    lo: float = 0.0
    hi: float = 0.0
    categories: list[str] = field(default_factory=list)

    @property
    def width(self) -> int:
        return len(self.categories) if self.transform is Transform.ONEHOT else 1

    def to_dict(self) -> dict:
        d = {"name": self.name, "transform": self.transform.value}
        if self.transform is Transform.ONEHOT:
            d["categories"] = list(self.categories)
        else:
            d["min"], d["max"] = self.lo, self.hi
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnSpec":
        t = Transform(d["transform"])
        if t is Transform.ONEHOT:
            return cls(d["name"], t, categories=list(d["categories"]))
        return cls(d["name"], t, float(d["min"]), float(d["max"]))


@dataclass
class KddSchema:
    columns: tuple = KDD_COLUMNS
    categorical: frozenset = KDD_CATEGORICAL
    log_columns: tuple = KDD_LOG_COLUMNS
    behavioral: tuple = KDD_BEHAVIORAL

    @property
    def contextual(self) -> tuple:
        return tuple(c for c in self.columns if c not in self.behavioral)


@dataclass
class PreprocessSpec:
    behavioral: list[ColumnSpec]
    contextual: list[ColumnSpec]

    def __post_init__(self):
        for col in self.behavioral + self.contextual:
            if col.transform is not Transform.ONEHOT and col.lo > col.hi:
                raise ValueError(f"column {col.name}: min > max")

    @property
    def dim_x(self) -> int:
        return sum(c.width for c in self.behavioral)

    @property
    def dim_c(self) -> int:
        return sum(c.width for c in self.contextual)

    def feature_names(self, block: str) -> list[str]:
        names = []
        for col in getattr(self, block):
            if col.transform is Transform.ONEHOT:
                names += [f"{col.name}={cat}" for cat in col.categories]
            else:
                names.append(col.name)
        return names

    def to_dict(self) -> dict:
        return {
            "behavioral": [c.to_dict() for c in self.behavioral],
            "contextual": [c.to_dict() for c in self.contextual],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessSpec":
        return cls(
            [ColumnSpec.from_dict(c) for c in d["behavioral"]],
            [ColumnSpec.from_dict(c) for c in d["contextual"]],
        )


def _column_values(records: Sequence[RawRecord], schema: KddSchema) -> dict[str, list]:
    cols = list(zip(*(rec.values for rec in records))) if records else [()] * len(schema.columns)
    return dict(zip(schema.columns, cols))


def _fit_column(name: str, values, schema: KddSchema) -> ColumnSpec:
    if name in schema.categorical:
        return ColumnSpec(name, Transform.ONEHOT, categories=sorted(set(values)))
    v = np.asarray(values, dtype=np.float64)
    if name in schema.log_columns:
        v = np.log1p(v)
        return ColumnSpec(name, Transform.LOG1P_MINMAX, float(v.min()), float(v.max()))
    return ColumnSpec(name, Transform.MINMAX, float(v.min()), float(v.max()))


def fit_preprocess(records: Sequence[RawRecord], schema: Optional[KddSchema] = None) -> PreprocessSpec:
    if not records:
        raise ValueError("fit_preprocess needs at least one record")
    schema = schema or KddSchema()
    cols = _column_values(records, schema)
    return PreprocessSpec(
        [_fit_column(name, cols[name], schema) for name in schema.behavioral],
        [_fit_column(name, cols[name], schema) for name in schema.contextual],
    )


def _apply_column(col: ColumnSpec, values) -> np.ndarray:
    if col.transform is Transform.ONEHOT:
        index = {cat: j for j, cat in enumerate(col.categories)}
        out = np.zeros((len(values), len(col.categories)))
        unseen = 0
        for i, v in enumerate(values):
            j = index.get(v)
            if j is None:
                unseen += 1
            else:
                out[i, j] = 1.0
        if unseen:
            log.warning("column %s: %d value(s) with unseen categories encoded as zeros", col.name, unseen)
        return out
    v = np.asarray(values, dtype=np.float64)
    if col.transform is Transform.LOG1P_MINMAX:
        v = np.log1p(v)
    span = col.hi - col.lo
    if span <= 0.0:
        return np.zeros((len(v), 1))
    return np.clip((v - col.lo) / span, 0.0, 1.0).reshape(-1, 1)


def apply_preprocess(
    spec: PreprocessSpec, records: Sequence[RawRecord], schema: Optional[KddSchema] = None
) -> PreparedDataset:
    schema = schema or KddSchema()
    cols = _column_values(records, schema)
    n = len(records)

    def block(specs: list[ColumnSpec]) -> np.ndarray:
        parts = [_apply_column(c, cols[c.name]) for c in specs]
        return np.hstack(parts) if parts else np.zeros((n, 0))

    return PreparedDataset(block(spec.behavioral), block(spec.contextual), anomaly_labels(records))


def write_records(path: os.PathLike, records: Iterable[RawRecord]) -> None:
    """Write records back out in the original (uncompressed) KDD line format."""

    def fmt(v) -> str:
        if isinstance(v, str):
            return v
        return str(int(v)) if float(v).is_integer() else repr(float(v))

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for rec in records:
            w.writerow([fmt(v) for v in rec.values] + [rec.label])
