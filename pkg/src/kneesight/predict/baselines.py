"""Least-squares baselines and the per-cell linear capacity extrapolation check."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

RIDGE_JITTER = 1e-10


class RankDeficient(np.linalg.LinAlgError):
    pass


def polynomial_terms(d: int, degree: int) -> list[tuple[int, ...]]:
    """Monomials of total degree 1..degree as tuples of column indices."""
    terms = []
    for k in range(1, degree + 1):
        terms += list(itertools.combinations_with_replacement(range(d), k))
    return terms


def expand(X: np.ndarray, terms: list[tuple[int, ...]]) -> np.ndarray:
    return np.column_stack([np.prod(X[:, list(t)], axis=1) for t in terms]) if terms else X[:, :0]


@dataclass
class LinearModel:
    kind: str
    degree: int
    terms: list[tuple[int, ...]]
    coef: np.ndarray  # on the raw expanded columns
    intercept: float

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return expand(X, self.terms) @ self.coef + self.intercept


def _solve_normal(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        L = np.linalg.cholesky(A)
        return np.linalg.solve(L.T, np.linalg.solve(L, b))
    except np.linalg.LinAlgError:
        pass
    A = A + RIDGE_JITTER * np.eye(len(A))
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise RankDeficient("normal equations stay singular after ridge jitter") from exc
    return np.linalg.solve(L.T, np.linalg.solve(L, b))


def fit_baseline(X, y, kind: str = "linear", degree: int = 2) -> LinearModel:
    """OLS through the normal equations on standardised columns.

    Constant columns carry no information and get a zero coefficient. A
    polynomial model expands the inputs to every monomial up to ``degree``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y) or len(y) == 0:
        raise ValueError("X must be 2-D with one row per target")
    if kind == "linear":
        degree = 1
    elif kind != "polynomial":
        raise ValueError(f"unknown baseline {kind!r}")
    if degree < 1:
        raise ValueError("degree must be >= 1")
    terms = polynomial_terms(X.shape[1], degree)
    Z = expand(X, terms)
    mu = Z.mean(axis=0)
    sd = Z.std(axis=0)
    live = sd > 0
    if len(y) < live.sum() + 1:
        raise ValueError(f"need at least {live.sum() + 1} rows, got {len(y)}")
    Zs = (Z[:, live] - mu[live]) / sd[live]
    ym = y.mean()
    beta = _solve_normal(Zs.T @ Zs, Zs.T @ (y - ym)) if live.any() else np.zeros(0)
    coef = np.zeros(Z.shape[1])
    coef[live] = beta / sd[live]
    intercept = float(ym - coef[live] @ mu[live])
    return LinearModel(kind, degree, terms, coef, intercept)


LINEAR_CAPACITY_COLUMNS = ("horizon_cycles", "N_cells", "RMSE_mean", "RMSE_std", "MAPE_mean", "MAPE_std")


def linear_capacity_validation(trajectories, horizons=(5, 10, 20), min_test: int = 1) -> list[list]:
    """Fit capacity (Ah) vs cycle on each cell's first h points and score the rest.

    Cells with fewer than ``h + min_test`` points are left out of horizon h.
    Spread columns use the n-1 sample standard deviation.
    """
    out = []
    for h in horizons:
        rmses, mapes = [], []
        for tr in trajectories:
            if len(tr) < h + min_test or h < 2:
                continue
            x = tr.cycles.astype(float)
            q = tr.capacity
            slope, icpt = np.polyfit(x[:h], q[:h], 1)
            pred = slope * x[h:] + icpt
            err = pred - q[h:]
            rmses.append(math.sqrt(float(np.mean(err**2))))
            nz = q[h:] != 0
            mapes.append(100.0 * float(np.mean(np.abs(err[nz] / q[h:][nz]))) if nz.any() else math.nan)
        n = len(rmses)
        sd = (lambda v: float(np.std(v, ddof=1)) if len(v) > 1 else math.nan)
        out.append(
            [
                h,
                n,
                float(np.mean(rmses)) if n else math.nan,
                sd(rmses),
                float(np.nanmean(mapes)) if n else math.nan,
                sd(mapes),
            ]
        )
    return out
