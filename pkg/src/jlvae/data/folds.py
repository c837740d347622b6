from __future__ import annotations

import numpy as np


def stratified_kfold(labels, k: int, seed: int) -> list[np.ndarray]:
    """Split row indices into ``k`` disjoint folds with equal class ratios.

    Each class is shuffled with a seeded generator; the shuffled indices of all
    classes are then dealt round-robin, so per-class fold counts differ by at
    most one and overall fold sizes differ by at most one. Folds are sorted.
    """
    labels = np.asarray(labels, dtype=bool)
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = np.random.Generator(np.random.PCG64(seed))
    order = []
    for cls in (False, True):
        members = np.flatnonzero(labels == cls)
        if len(members) < k:
            raise ValueError(f"class {int(cls)} has {len(members)} member(s), fewer than k={k}")
        order.append(rng.permutation(members))
    dealt = np.concatenate(order)
    folds = [np.sort(dealt[i::k]) for i in range(k)]
    return folds


def stratified_subsample(labels, n: int, seed: int) -> np.ndarray:
    """Sorted indices of a seeded ``n``-row sample preserving the class ratio."""
    labels = np.asarray(labels, dtype=bool)
    total = len(labels)
    if n >= total:
        return np.arange(total)
    rng = np.random.Generator(np.random.PCG64(seed))
    pos = np.flatnonzero(labels)
    neg = np.flatnonzero(~labels)
    n_pos = int(round(n * len(pos) / total))
    pick = np.concatenate(
        [rng.choice(pos, n_pos, replace=False), rng.choice(neg, n - n_pos, replace=False)]
    )
    return np.sort(pick)


def stratified_split(labels, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """(rest, held_out) where ``held_out`` is a stratified ``fraction`` of rows."""
    labels = np.asarray(labels, dtype=bool)
    held = stratified_subsample(labels, int(round(fraction * len(labels))), seed)
    mask = np.zeros(len(labels), dtype=bool)
    mask[held] = True
    return np.flatnonzero(~mask), held
