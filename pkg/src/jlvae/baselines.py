"""Point-anomaly baselines: Isolation Forest and Local Outlier Factor.

Both consume a single matrix, normally the concatenation of contextual and
behavioral attributes, and return scores where higher means more anomalous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma

EULER_GAMMA = 0.5772156649015329


def harmonic(n) -> np.ndarray:
    """H(n) = 1 + 1/2 + ... + 1/n, with H(0) = 0."""
    n = np.asarray(n, dtype=np.float64)
    return np.where(n > 0, digamma(n + 1.0) + EULER_GAMMA, 0.0)


def average_path_length(m) -> np.ndarray:
    """c(m) = 2 H(m - 1) - 2 (m - 1) / m, the mean unsuccessful-search depth of a BST."""
    m = np.asarray(m, dtype=np.float64)
    safe = np.maximum(m, 1.0)
    out = 2.0 * harmonic(safe - 1.0) - 2.0 * (safe - 1.0) / safe
    return np.where(m <= 1.0, 0.0, out)


@dataclass
class IsoTree:
    """Flat arrays; ``feature == -1`` marks a leaf whose training size is ``size``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray
    depth: np.ndarray

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())


@dataclass
class IsoForestModel:
    trees: list[IsoTree]
    subsample_size: int
    n_trees: int


def _grow(data: np.ndarray, height_limit: int, rng: np.random.Generator) -> IsoTree:
    feature, threshold, left, right, size, depth = [], [], [], [], [], []

    def new_node(n: int, d: int) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        size.append(n)
        depth.append(d)
        return len(feature) - 1

    stack = [(np.arange(len(data)), 0, new_node(len(data), 0))]
    while stack:
        idx, d, node = stack.pop()
        if d >= height_limit or len(idx) <= 1:
            continue
        sub = data[idx]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        live = np.flatnonzero(hi > lo)
        if live.size == 0:
            continue
        q = int(live[rng.integers(live.size)])
        p = rng.uniform(lo[q], hi[q])
        if p <= lo[q]:  # uniform() can return the lower bound exactly
            p = np.nextafter(lo[q], hi[q])
        go_left = sub[:, q] < p
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = q, p
        left[node] = new_node(len(li), d + 1)
        right[node] = new_node(len(ri), d + 1)
        stack.append((ri, d + 1, right[node]))
        stack.append((li, d + 1, left[node]))
    return IsoTree(
        np.array(feature), np.array(threshold), np.array(left), np.array(right), np.array(size), np.array(depth)
    )


def iforest_fit(data: np.ndarray, n_trees: int = 100, subsample_size: int = 256, seed: int = 0) -> IsoForestModel:
    data = np.asarray(data, dtype=np.float64)
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    n = data.shape[0]
    if not 1 <= subsample_size <= n:
        raise ValueError(f"subsample_size must be in [1, {n}]")
    height_limit = math.ceil(math.log2(subsample_size)) if subsample_size > 1 else 0
    trees = []
    for t in range(n_trees):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, t])))
        pick = rng.choice(n, subsample_size, replace=False)
        trees.append(_grow(data[pick], height_limit, rng))
    return IsoForestModel(trees, subsample_size, n_trees)


def path_lengths(tree: IsoTree, data: np.ndarray) -> np.ndarray:
    """h(x): edges to the leaf plus c(leaf size) for the unbuilt subtree."""
    node = np.zeros(data.shape[0], dtype=np.int64)
    rows = np.arange(data.shape[0])
    while True:
        f = tree.feature[node]
        internal = f >= 0
        if not internal.any():
            break
        r = rows[internal]
        n = node[internal]
        go_left = data[r, f[internal]] < tree.threshold[n]
        node[internal] = np.where(go_left, tree.left[n], tree.right[n])
    return tree.depth[node] + average_path_length(tree.size[node])


def iforest_score(model: IsoForestModel, data: np.ndarray) -> np.ndarray:
    """2 ** (-E[h(x)] / c(subsample_size)), in (0, 1]."""
    data = np.asarray(data, dtype=np.float64)
    mean_h = np.mean([path_lengths(t, data) for t in model.trees], axis=0)
    norm = float(average_path_length(model.subsample_size))
    if norm == 0.0:
        return np.ones(data.shape[0])
    return np.power(2.0, -mean_h / norm)


@dataclass
class LofConfig:
    k: int = 20
    chunk_rows: int = 256


def _knn_lists(data: np.ndarray, k: int, chunk: int) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    """k-distance per row and the tie-inclusive k-neighborhood (indices, distances)."""
    n = data.shape[0]
    sq = np.einsum("ij,ij->i", data, data)
    kdist = np.empty(n)
    nbr_idx, nbr_dist = [], []
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        block = data[start:stop]
        scale = sq[start:stop, None] + sq[None, :]
        d2 = scale - 2.0 * (block @ data.T)
        # cancellation noise on (near-)duplicates must not masquerade as distance
        d2[d2 <= 1e-12 * scale] = 0.0
        d = np.sqrt(d2)
        local = np.arange(stop - start)
        d[local, local + start] = np.inf  # exclude self
        kd = np.partition(d, k - 1, axis=1)[:, k - 1]
        kdist[start:stop] = kd
        for i in range(stop - start):
            idx = np.flatnonzero(d[i] <= kd[i])
            nbr_idx.append(idx)
            nbr_dist.append(d[i, idx])
    return kdist, nbr_idx, nbr_dist


def lof_score(data: np.ndarray, config: LofConfig = LofConfig()) -> np.ndarray:
    """Local Outlier Factor of every row against the rest of ``data``.

    Neighborhoods include all points tied at the k-distance. A row whose mean
    reachability distance is zero (a cluster of more than k exact duplicates)
    gets infinite density; a ratio of two infinite densities counts as 1.
    """
    data = np.asarray(data, dtype=np.float64)
    n = data.shape[0]
    k = config.k
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < N (k={k}, N={n})")
    kdist, nbr_idx, nbr_dist = _knn_lists(data, k, config.chunk_rows)
    # reach-dist(p, o) = max(k-distance(o), d(p, o))
    mean_reach = np.array([np.mean(np.maximum(kdist[idx], d)) for idx, d in zip(nbr_idx, nbr_dist)])
    with np.errstate(divide="ignore"):
        lrd = np.where(mean_reach > 0, 1.0 / np.where(mean_reach > 0, mean_reach, 1.0), np.inf)
    out = np.empty(n)
    for p in range(n):
        o = lrd[nbr_idx[p]]
        if np.isinf(lrd[p]):
            ratios = np.where(np.isinf(o), 1.0, 0.0)
        else:
            ratios = o / lrd[p]
        out[p] = ratios.mean()
    return out
