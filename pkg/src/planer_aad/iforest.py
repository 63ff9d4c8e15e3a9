"""Isolation forest over flattened spectrograms.

Each tree is grown on a subsample of ``min(256, n)`` rows drawn without
replacement, splitting on a random non-constant feature at a value drawn
uniformly between that feature's min and max in the node, down to depth
``ceil(log2(subsample))``. A point's path length is its depth plus
``c(leaf_size)``; the anomaly score is ``2 ** (-mean_path / c(subsample))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EULER_GAMMA = 0.5772156649


def expected_path_length(n) -> float:
    """Average unsuccessful-search path length of a BST with n nodes, c(n)."""
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    return 2.0 * (math.log(n - 1) + EULER_GAMMA) - 2.0 * (n - 1) / n


@dataclass
class IsolationTree:
    # parallel node arrays; feature == -1 marks a leaf
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray

    @property
    def depth(self) -> int:
        depth = np.zeros(len(self.feature), dtype=int)
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def path_lengths(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=int)
        depth = np.zeros(len(X))
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] < self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            depth[idx] += 1
            active = self.feature[node] >= 0
        leaf_credit = np.array([expected_path_length(s) for s in self.size])
        return depth + leaf_credit[node]


@dataclass
class IsolationForest:
    trees: list = field(default_factory=list)
    subsample_size: int = 256
    train_size: int = 0
    n_features: int = 0

    @property
    def n_trees(self):
        return len(self.trees)


def _pick_split(X, rng, max_tries=16):
    d = X.shape[1]
    for _ in range(max_tries):
        f = int(rng.integers(d))
        col = X[:, f]
        lo, hi = col.min(), col.max()
        if hi > lo:
            return f, lo, hi
    lo, hi = X.min(axis=0), X.max(axis=0)
    candidates = np.flatnonzero(hi > lo)
    if candidates.size == 0:
        return None
    f = int(candidates[rng.integers(candidates.size)])
    return f, lo[f], hi[f]


def _build_tree(X, rows, rng, max_depth) -> IsolationTree:
    feature, threshold, left, right, size = [], [], [], [], []

    def new_node(n):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        size.append(n)
        return len(feature) - 1

    stack = [(new_node(len(rows)), rows, 0)]
    while stack:
        node, idx, depth = stack.pop()
        if depth >= max_depth or len(idx) <= 1:
            continue
        split = _pick_split(X[idx], rng)
        if split is None:
            continue
        f, lo, hi = split
        thr = rng.uniform(lo, hi)
        if thr <= lo:  # keep both sides non-empty
            thr = np.nextafter(lo, hi)
        mask = X[idx, f] < thr
        feature[node], threshold[node] = f, thr
        li, ri = idx[mask], idx[~mask]
        left[node], right[node] = new_node(len(li)), new_node(len(ri))
        # right pushed first so the left subtree is expanded first
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return IsolationTree(np.array(feature), np.array(threshold), np.array(left), np.array(right), np.array(size))


def fit_iforest(data, n_trees=100, subsample=256, seed=0, subsamples=None) -> IsolationForest:
    """Grow ``n_trees`` isolation trees on ``data`` (n x d).

    Tree ``i`` uses its own generator seeded from ``(seed, i)``. Passing
    ``subsamples`` (one index array per tree) overrides the random row
    draws.
    """
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2:
        X = X.reshape(len(X), -1)
    n = len(X)
    if n < 2:
        raise ValueError("isolation forest needs at least two training rows")
    psi = min(subsample, n)
    max_depth = math.ceil(math.log2(psi))
    trees = []
    for i in range(n_trees):
        rng = np.random.default_rng([seed, i])
        rows = rng.choice(n, psi, replace=False) if subsamples is None else np.asarray(subsamples[i])
        trees.append(_build_tree(X, np.asarray(rows), rng, max_depth))
    return IsolationForest(trees, psi, n, X.shape[1])


def iforest_scores(forest: IsolationForest, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    elif X.ndim > 2:
        X = X.reshape(len(X), -1)
    if X.shape[1] != forest.n_features:
        raise ValueError(f"expected {forest.n_features} features, got {X.shape[1]}")
    mean_path = np.mean([t.path_lengths(X) for t in forest.trees], axis=0)
    return 2.0 ** (-mean_path / expected_path_length(forest.subsample_size))


def iforest_score(forest: IsolationForest, x) -> float:
    return float(iforest_scores(forest, np.asarray(x).ravel()[None, :])[0])
