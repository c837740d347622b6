"""Ranking metrics for anomaly scores (positive label = anomaly, higher score = more anomalous).

Thresholds sit at the distinct score values in descending order; an observation
is predicted positive at threshold ``t`` when ``score >= t``, so tied scores
enter the positive set together.

Every returned value is the float nearest to the exact rational result: ratios
are single integer divisions, and the step-wise precision-recall area is summed
in integer fixed point before one final rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class CurvePoint:
    threshold: float
    precision: float
    recall: float
    fpr: float
    tpr: float
    tp: int = 0
    fp: int = 0


def _check(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).astype(bool).reshape(-1)
    if s.shape != y.shape:
        raise ValueError(f"scores and labels differ in length ({s.size} vs {y.size})")
    return s, y


def roc_auc(scores, labels) -> float:
    """Mann-Whitney statistic P(s_pos > s_neg) + 0.5 P(s_pos == s_neg)."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes present")
    ranks = rankdata(s)  # average ranks for ties
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _counts(s: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distinct thresholds (descending) with cumulative TP and FP counts."""
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    tp = np.cumsum(y_sorted)
    fp = np.cumsum(~y_sorted)
    # last position of each run of equal scores
    last = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    return s_sorted[last], tp[last], fp[last]


# fixed-point resolution for the step area; the accumulated truncation error
# (below n_thresholds * 2**-256) cannot move the final rounding in practice
_FIXED_BITS = 256


def _step_area(tp: np.ndarray, fp: np.ndarray, n_pos: int) -> float:
    """Sum over thresholds of (R_n - R_{n-1}) * P_n, with R_0 = 0."""
    scale = 1 << _FIXED_BITS
    acc = 0
    prev = 0
    for a, b in zip(tp.tolist(), fp.tolist()):
        if a != prev:
            acc += ((a - prev) * a * scale) // ((a + b) * n_pos)
            prev = a
    return acc / scale


def pr_curve(scores, labels) -> list[CurvePoint]:
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("pr_curve needs at least one positive")
    n_neg = y.size - n_pos
    thr, tp, fp = _counts(s, y)
    points = []
    for t, a, b in zip(thr, tp, fp):
        recall = a / n_pos
        points.append(CurvePoint(float(t), a / (a + b), recall, b / n_neg if n_neg else 0.0, recall, int(a), int(b)))
    return points


def prc_auc(curve: list[CurvePoint]) -> float:
    """Area under the precision-recall curve by the right-step rule."""
    if not curve:
        raise ValueError("empty curve")
    tp = np.array([p.tp for p in curve], dtype=np.int64)
    fp = np.array([p.fp for p in curve], dtype=np.int64)
    # the last threshold is the smallest score, where every positive is predicted
    return _step_area(tp, fp, int(tp[-1]))


def average_precision(scores, labels) -> float:
    """Sum over thresholds of (R_n - R_{n-1}) * P_n with R_0 = 0."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("average_precision needs at least one positive")
    _, tp, fp = _counts(s, y)
    return _step_area(tp, fp, n_pos)


def top_k_precision(scores, labels, k: int = 100) -> float:
    """Fraction of positives among the ``k`` highest scores.

    Ties at the cut-off are broken by ascending row index.
    """
    s, y = _check(scores, labels)
    if k < 1 or k > s.size:
        raise ValueError(f"k={k} outside [1, {s.size}]")
    top = np.argsort(-s, kind="stable")[:k]
    return float(y[top].sum() / k)


def summary(scores, labels, k: int = 100) -> dict[str, float]:
    """The four table columns: PRC area, APS, ROC area and top-k precision."""
    return {
        "prc_auc": prc_auc(pr_curve(scores, labels)),
        "aps": average_precision(scores, labels),
        "roc_auc": roc_auc(scores, labels),
        f"top{k}_precision": top_k_precision(scores, labels, min(k, len(scores))),
    }
