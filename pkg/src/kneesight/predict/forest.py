"""Random forest regression built from CART trees (numba-compiled core).

Trees use variance-reduction splits with an exhaustive scan over midpoints of
sorted unique feature values. Each tree owns an RNG stream keyed by
``(seed, tree index)``, so the ensemble does not depend on build order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 300
    max_depth: int | None = None
    min_samples_split: int = 2
    features_per_split: int | None = None  # None -> ceil(d / 3)
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")


@dataclass
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray


@dataclass
class ForestModel:
    config: ForestConfig
    trees: list[Tree]
    n_features: int


@dataclass(frozen=True)
class UncertainPrediction:
    mean: np.ndarray
    sigma: np.ndarray
    source: str


@numba.njit(cache=True)
def _best_split(X, y, idx, feats, min_leaf_gain):
    """Best (feature, threshold, gain) over ``feats``; feature -1 if none."""
    m = idx.shape[0]
    best_f = -1
    best_t = 0.0
    best_gain = min_leaf_gain
    tot = 0.0
    for i in range(m):
        tot += y[idx[i]]
    xs = np.empty(m)
    ys = np.empty(m)
    for f in feats:
        for i in range(m):
            xs[i] = X[idx[i], f]
        order = np.argsort(xs, kind="mergesort")
        for i in range(m):
            ys[i] = y[idx[order[i]]]
        xsorted = xs[order]
        if xsorted[0] == xsorted[m - 1]:
            continue
        left = 0.0
        for i in range(m - 1):
            left += ys[i]
            if xsorted[i] == xsorted[i + 1]:
                continue
            nl = i + 1
            nr = m - nl
            right = tot - left
            # SSE reduction = nl*mean_l^2 + nr*mean_r^2 - m*mean^2
            gain = left * left / nl + right * right / nr - tot * tot / m
            if gain > best_gain:
                best_gain = gain
                best_f = f
                best_t = 0.5 * (xsorted[i] + xsorted[i + 1])
    return best_f, best_t, best_gain


@numba.njit(cache=True)
def _grow(X, y, rows, keys, mtry, max_depth, min_split):
    """Depth-first growth; ``keys[node]`` holds per-node random feature priorities."""
    d = X.shape[1]
    cap = 2 * rows.shape[0] + 1
    feature = -np.ones(cap, dtype=np.int64)
    threshold = np.zeros(cap)
    left = -np.ones(cap, dtype=np.int64)
    right = -np.ones(cap, dtype=np.int64)
    value = np.zeros(cap)

    stack_idx = [rows]
    stack_node = [0]
    stack_depth = [0]
    n_nodes = 1
    while len(stack_idx) > 0:
        idx = stack_idx.pop()
        node = stack_node.pop()
        depth = stack_depth.pop()
        m = idx.shape[0]
        y0 = y[idx[0]]
        pure = True
        s = 0.0
        for i in range(m):
            s += y[idx[i]]
            if y[idx[i]] != y0:
                pure = False
        value[node] = y0 if pure else s / m
        if pure or m < min_split or (max_depth >= 0 and depth >= max_depth):
            continue
        order = np.argsort(keys[node % keys.shape[0]], kind="mergesort")
        f, t, _ = _best_split(X, y, idx, order[:mtry], 1e-300)
        if f < 0 and mtry < d:
            # fall back to the remaining features rather than stop early
            f, t, _ = _best_split(X, y, idx, order[mtry:], 1e-300)
        if f < 0:
            continue
        goes_left = X[idx, f] <= t
        li = idx[goes_left]
        ri = idx[~goes_left]
        feature[node] = f
        threshold[node] = t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack_idx.append(ri)
        stack_node.append(n_nodes + 1)
        stack_depth.append(depth + 1)
        stack_idx.append(li)
        stack_node.append(n_nodes)
        stack_depth.append(depth + 1)
        n_nodes += 2
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


@numba.njit(cache=True)
def _predict_tree(X, feature, threshold, left, right, value):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


def _as_matrix(X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite features")
    return X


def fit_tree(X, y, cfg: ForestConfig, index: int = 0) -> Tree:
    X = _as_matrix(X)
    y = np.ascontiguousarray(y, dtype=float)
    n, d = X.shape
    rng = np.random.default_rng([cfg.seed, index])
    rows = rng.integers(0, n, size=n) if cfg.bootstrap else np.arange(n)
    mtry = cfg.features_per_split or max(1, math.ceil(d / 3))
    mtry = min(mtry, d)
    keys = rng.random((2 * n + 1, d))
    depth = -1 if cfg.max_depth is None else cfg.max_depth
    f, t, l, r, v = _grow(X, y, rows.astype(np.int64), keys, mtry, depth, cfg.min_samples_split)
    return Tree(f, t, l, r, v)


def fit_forest(X, y, cfg: ForestConfig = ForestConfig()) -> ForestModel:
    X = _as_matrix(X)
    y = np.asarray(y, dtype=float)
    if len(y) == 0 or len(y) != len(X):
        raise ValueError("need a non-empty X, y of equal length")
    trees = [fit_tree(X, y, cfg, b) for b in range(cfg.n_trees)]
    return ForestModel(cfg, trees, X.shape[1])


def tree_predictions(model: ForestModel, X) -> np.ndarray:
    X = _as_matrix(X)
    if X.shape[1] != model.n_features:
        raise ValueError("feature count mismatch")
    return np.vstack([_predict_tree(X, t.feature, t.threshold, t.left, t.right, t.value) for t in model.trees])


def predict(model: ForestModel, X) -> np.ndarray:
    return tree_predictions(model, X).mean(axis=0)


def predict_with_variance(model: ForestModel, X) -> UncertainPrediction:
    """Tree-mean prediction and the population spread across trees."""
    P = tree_predictions(model, X)
    mean = P.mean(axis=0)
    var = np.mean((P - mean) ** 2, axis=0)
    return UncertainPrediction(mean, np.sqrt(var), "forest_ensemble")
