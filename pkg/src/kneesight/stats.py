"""Correlation, bootstrap intervals, group tests, effect sizes, PCA and k-means."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .specfun import chi2_sf, f_sf


class DegenerateData(ValueError):
    pass


# ---------------------------------------------------------------------------
# correlation


@dataclass(frozen=True)
class CorrelationReport:
    method: str
    estimate: float
    n: int
    ci_low: float | None = None
    ci_high: float | None = None
    bootstrap_b: int = 0
    seed: int | None = None
    degenerate_resamples: int = 0


def rankdata(x) -> np.ndarray:
    """Ranks starting at 1; ties share their average rank."""
    x = np.asarray(x, dtype=float)
    s = np.sort(x)
    lo = np.searchsorted(s, x, side="left")
    hi = np.searchsorted(s, x, side="right")
    return 0.5 * (lo + hi + 1)


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    syy = float(yc @ yc)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateData("zero variance")
    r = float(xc @ yc) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def _check_pair(x, y, min_n: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be equal-length vectors")
    if len(x) < min_n:
        raise ValueError(f"need n >= {min_n}, got {len(x)}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite values")
    return x, y


def correlation(x, y, method: str = "pearson") -> CorrelationReport:
    x, y = _check_pair(x, y, 3)
    if method == "pearson":
        r = _pearson(x, y)
    elif method == "spearman":
        r = _pearson(rankdata(x), rankdata(y))
    else:
        raise ValueError(f"unknown method {method!r}")
    return CorrelationReport(method, r, len(x))


def _rowwise_pearson(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    Xc = X - X.mean(axis=1, keepdims=True)
    Yc = Y - Y.mean(axis=1, keepdims=True)
    sxx = (Xc * Xc).sum(axis=1)
    syy = (Yc * Yc).sum(axis=1)
    ok = (sxx > 0) & (syy > 0)
    r = np.full(len(X), np.nan)
    r[ok] = (Xc[ok] * Yc[ok]).sum(axis=1) / np.sqrt(sxx[ok] * syy[ok])
    return np.clip(r, -1.0, 1.0)


def bootstrap_ci(
    x,
    y,
    method: str = "pearson",
    b: int = 2000,
    level: float = 0.95,
    seed: int = 0,
) -> CorrelationReport:
    """Paired percentile bootstrap.

    The full ``b x n`` resampling index matrix is drawn up front from one
    seeded generator, so any split of the rows across workers gives the same
    answer.
    """
    x, y = _check_pair(x, y, 10)
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    est = correlation(x, y, method).estimate
    n = len(x)
    idx = np.random.default_rng(seed).integers(0, n, size=(b, n))
    X, Y = x[idx], y[idx]
    if method == "spearman":
        X = np.apply_along_axis(rankdata, 1, X)
        Y = np.apply_along_axis(rankdata, 1, Y)
    r = _rowwise_pearson(X, Y)
    bad = int(np.isnan(r).sum())
    if bad > b / 2:
        raise DegenerateData(f"{bad} of {b} resamples have zero variance")
    r = r[~np.isnan(r)]
    alpha = 1.0 - level
    lo, hi = np.quantile(r, [alpha / 2.0, 1.0 - alpha / 2.0])
    # keep the point estimate inside the reported bounds
    lo, hi = min(float(lo), est), max(float(hi), est)
    return CorrelationReport(method, est, n, lo, hi, b, seed, bad)


# ---------------------------------------------------------------------------
# group tests and effect sizes


@dataclass(frozen=True)
class GroupTestReport:
    test: str
    statistic: float
    p_value: float
    df: tuple[float, ...]
    sizes: tuple[int, ...]


def _check_groups(groups) -> list[np.ndarray]:
    gs = [np.asarray(g, dtype=float).ravel() for g in groups]
    if len(gs) < 2:
        raise ValueError("need at least two groups")
    for g in gs:
        if len(g) == 0:
            raise ValueError("empty group")
        if len(g) < 2:
            raise ValueError("each group needs at least two observations")
    return gs


def group_test(groups, test: str = "anova_f") -> GroupTestReport:
    gs = _check_groups(groups)
    sizes = tuple(len(g) for g in gs)
    k, N = len(gs), sum(sizes)
    if test == "anova_f":
        grand = np.concatenate(gs).mean()
        ssb = sum(len(g) * (g.mean() - grand) ** 2 for g in gs)
        ssw = sum(float(((g - g.mean()) ** 2).sum()) for g in gs)
        d1, d2 = k - 1, N - k
        if ssb == 0.0:
            F, p = 0.0, 1.0
        elif ssw == 0.0:
            F, p = math.inf, 0.0
        else:
            F = (ssb / d1) / (ssw / d2)
            p = f_sf(F, d1, d2)
        return GroupTestReport(test, float(F), float(p), (d1, d2), sizes)
    if test == "kruskal_wallis":
        pooled = np.concatenate(gs)
        ranks = rankdata(pooled)
        bounds = np.cumsum((0,) + sizes)
        h = sum(ranks[a:b].sum() ** 2 / (b - a) for a, b in zip(bounds[:-1], bounds[1:]))
        H = 12.0 / (N * (N + 1)) * h - 3.0 * (N + 1)
        _, counts = np.unique(pooled, return_counts=True)
        corr = 1.0 - float((counts**3 - counts).sum()) / (N**3 - N)
        if corr <= 0.0:
            H, p = 0.0, 1.0
        else:
            H = max(H / corr, 0.0)
            p = chi2_sf(H, k - 1)
        return GroupTestReport(test, float(H), float(p), (k - 1,), sizes)
    raise ValueError(f"unknown test {test!r}")


def cliffs_delta(a, b) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    diff = a[:, None] - b[None, :]
    return float((np.sum(diff > 0) - np.sum(diff < 0)) / (len(a) * len(b)))


def cohens_d(a, b) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    na, nb = len(a), len(b)
    pooled = ((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2)
    if pooled == 0.0:
        raise DegenerateData("pooled standard deviation is zero")
    return float((a.mean() - b.mean()) / math.sqrt(pooled))


def effect_sizes(a, b) -> tuple[float, float]:
    """``(cohens_d, cliffs_delta)``; d is NaN when the pooled spread is zero."""
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each group needs at least two observations")
    try:
        d = cohens_d(a, b)
    except DegenerateData:
        d = math.nan
    return d, cliffs_delta(a, b)


# ---------------------------------------------------------------------------
# PCA and k-means


def jacobi_eigh(A: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of a symmetric matrix by cyclic Jacobi rotations.

    Stops once the off-diagonal Frobenius norm falls below ``tol`` times the
    matrix norm (absolute ``tol`` for a zero matrix).
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    V = np.eye(n)
    scale = max(float(np.linalg.norm(A)), 1.0)
    for _ in range(max_sweeps):
        off = math.sqrt(max(float((A * A).sum() - (np.diag(A) ** 2).sum()), 0.0))
        if off < tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rp, rq = A[p].copy(), A[q].copy()
                A[p], A[q] = c * rp - s * rq, s * rp + c * rq
                cp, cq = A[:, p].copy(), A[:, q].copy()
                A[:, p], A[:, q] = c * cp - s * cq, s * cp + c * cq
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p], V[:, q] = c * vp - s * vq, s * vp + c * vq
    return np.diag(A).copy(), V


@dataclass(frozen=True)
class PcaResult:
    mean: np.ndarray
    components: np.ndarray  # rows are unit basis vectors
    eigenvalues: np.ndarray
    explained_variance_ratio: np.ndarray
    scores: np.ndarray

    def reconstruct(self, scores=None) -> np.ndarray:
        s = self.scores if scores is None else scores
        return s @ self.components + self.mean


def pca(matrix, n_components: int | None = None) -> PcaResult:
    X = np.asarray(matrix, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need a 2-D matrix with at least two rows")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite entries")
    m = min(X.shape)
    n_components = m if n_components is None else n_components
    if not 1 <= n_components <= m:
        raise ValueError(f"n_components must lie in [1, {m}]")
    mu = X.mean(axis=0)
    Xc = X - mu
    cov = Xc.T @ Xc / (X.shape[0] - 1)
    total = float(np.trace(cov))
    if total == 0.0:
        raise DegenerateData("constant matrix")
    vals, vecs = jacobi_eigh(cov)
    order = np.argsort(-vals, kind="stable")[:n_components]
    comps = vecs[:, order].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    ev = np.clip(vals[order], 0.0, None)
    return PcaResult(mu, comps, ev, ev / total, Xc @ comps.T)


@dataclass(frozen=True)
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    inertia_history: list[float]
    n_iter: int


def _sq_dist(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def kmeans(matrix, k: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-9) -> KMeansResult:
    """Lloyd iterations from a k-means++ start.

    ``inertia_history`` records the objective after each assignment step.
    """
    X = np.asarray(matrix, dtype=float)
    if k < 1:
        raise ValueError("k must be >= 1")
    if X.ndim != 2 or X.shape[0] < k:
        raise ValueError("need at least k rows")
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    C = np.empty((k, X.shape[1]))
    C[0] = X[rng.integers(n)]
    d2 = _sq_dist(X, C[:1])[:, 0]
    for j in range(1, k):
        tot = d2.sum()
        i = int(rng.choice(n, p=d2 / tot)) if tot > 0 else int(rng.integers(n))
        C[j] = X[i]
        d2 = np.minimum(d2, _sq_dist(X, C[j : j + 1])[:, 0])

    history: list[float] = []
    it = 0
    for it in range(1, max_iter + 1):
        D = _sq_dist(X, C)
        labels = D.argmin(axis=1)
        dmin = D[np.arange(n), labels]
        history.append(float(dmin.sum()))
        new = C.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = X[members].mean(axis=0)
            else:
                far = int(np.argmax(dmin))
                new[j] = X[far]
                dmin[far] = 0.0
        shift = float(np.sqrt(((new - C) ** 2).sum(axis=1)).max())
        C = new
        if shift < tol:
            break
    D = _sq_dist(X, C)
    labels = D.argmin(axis=1)
    inertia = float(D[np.arange(n), labels].sum())
    return KMeansResult(labels, C, inertia, history, it)


def trajectory_matrix(trajectories, n_points: int = 50) -> np.ndarray:
    """SOH curves resampled onto a shared cycle grid (the shortest common span)."""
    if not trajectories:
        raise ValueError("no trajectories")
    lo = max(int(t.cycles[0]) for t in trajectories)
    hi = min(int(t.cycles[-1]) for t in trajectories)
    if hi <= lo:
        raise ValueError("trajectories share no common cycle span")
    grid = np.linspace(lo, hi, n_points)
    return np.vstack([np.interp(grid, t.cycles, t.soh) for t in trajectories])


@dataclass(frozen=True)
class EmbeddingReport:
    components: np.ndarray
    explained_variance_ratio: np.ndarray
    scores: np.ndarray
    labels: np.ndarray
    centroids: np.ndarray


def embed(matrix, n_components: int = 2, k: int = 4, seed: int = 0) -> EmbeddingReport:
    """PCA projection followed by k-means on the scores."""
    p = pca(matrix, n_components)
    km = kmeans(p.scores, k, seed)
    return EmbeddingReport(p.components, p.explained_variance_ratio, p.scores, km.labels, km.centroids)
