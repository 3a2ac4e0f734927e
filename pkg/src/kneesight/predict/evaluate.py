"""Metrics, cross-validation, cross-dataset transfer, calibration and importance."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import stats
from .dataset import SupervisedDataset, cell_level_split
from .models import ModelSpec, fit_model


class UndefinedMetric(ValueError):
    pass


@dataclass(frozen=True)
class EvalReport:
    rmse: float
    mae: float
    mape: float
    r2: float
    n: int
    mape_excluded: int = 0
    n_folds: int = 1
    rmse_std: float = 0.0
    mae_std: float = 0.0
    mape_std: float = 0.0
    r2_std: float = 0.0


def evaluate(predictions, targets) -> EvalReport:
    """RMSE, MAE, MAPE (percent, zero targets excluded and counted) and R^2."""
    p = np.asarray(predictions, dtype=float).ravel()
    t = np.asarray(targets, dtype=float).ravel()
    if p.shape != t.shape:
        raise ValueError("predictions and targets differ in length")
    if len(t) < 2:
        raise ValueError("need at least two points")
    e = p - t
    rmse = math.sqrt(float(np.mean(e * e)))
    mae = float(np.mean(np.abs(e)))
    nz = t != 0
    if not nz.any():
        raise UndefinedMetric("MAPE undefined: all targets are zero")
    mape = 100.0 * float(np.mean(np.abs(e[nz] / t[nz])))
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if ss_tot == 0.0:
        raise UndefinedMetric("R^2 undefined: constant targets")
    r2 = 1.0 - float(np.sum(e * e)) / ss_tot
    return EvalReport(rmse, mae, mape, r2, len(t), int((~nz).sum()))


def _aggregate(reports: list[EvalReport]) -> EvalReport:
    def ms(attr):
        v = np.array([getattr(r, attr) for r in reports])
        return float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0

    (rm, rs), (am, as_), (pm, ps), (qm, qs) = ms("rmse"), ms("mae"), ms("mape"), ms("r2")
    return EvalReport(
        rm, am, pm, qm,
        sum(r.n for r in reports),
        sum(r.mape_excluded for r in reports),
        len(reports), rs, as_, ps, qs,
    )


@dataclass
class CvResult:
    report: EvalReport
    folds: np.ndarray
    fold_reports: list[EvalReport]
    predictions: np.ndarray
    sigma: np.ndarray | None


def cross_validate(dataset: SupervisedDataset, spec: ModelSpec, n_folds: int = 5, seed: int = 0, with_sigma: bool = False) -> CvResult:
    """Cell-level k-fold; fold metrics are averaged (std uses n-1)."""
    folds = cell_level_split(dataset, n_folds, seed)
    spec = spec.with_seed(seed)
    pred = np.empty(len(dataset))
    sigma = np.empty(len(dataset)) if with_sigma else None
    reports = []
    for f in range(n_folds):
        te = folds == f
        model = fit_model(spec, dataset.X[~te], dataset.y[~te], dataset.cell_ids[~te])
        if with_sigma:
            u = model.predict_uncertain(dataset.X[te])
            pred[te], sigma[te] = u.mean, u.sigma
        else:
            pred[te] = model.predict(dataset.X[te])
        reports.append(evaluate(pred[te], dataset.y[te]))
    return CvResult(_aggregate(reports), folds, reports, pred, sigma)


@dataclass
class TransferMatrix:
    tags: list[str]
    rmse: np.ndarray  # rows: train tag, cols: test tag
    fold_std: np.ndarray  # CV spread on the diagonal, 0 elsewhere


def cross_dataset_matrix(dataset: SupervisedDataset, spec: ModelSpec, n_folds: int = 5, seed: int = 0) -> TransferMatrix:
    """RMSE for every (train tag, test tag) pair.

    Off-diagonal cells train on the whole train population and score the whole
    test population. Training and scoring on the same rows would only measure
    memorisation, so diagonal cells are cell-level k-fold CV within the tag.
    """
    tags = sorted(set(dataset.tags))
    if len(tags) < 2:
        raise ValueError("need at least two tagged populations")
    k = len(tags)
    M = np.zeros((k, k))
    S = np.zeros((k, k))
    spec = spec.with_seed(seed)
    for i, a in enumerate(tags):
        tr = dataset.subset(dataset.tags == a)
        if len(tr) == 0:
            raise ValueError(f"empty population {a!r}")
        cv = cross_validate(tr, spec, n_folds, seed)
        M[i, i] = cv.report.rmse
        S[i, i] = cv.report.rmse_std
        model = fit_model(spec, tr.X, tr.y, tr.cell_ids)
        for j, b in enumerate(tags):
            if i == j:
                continue
            te = dataset.subset(dataset.tags == b)
            M[i, j] = evaluate(model.predict(te.X), te.y).rmse
    return TransferMatrix(tags, M, S)


@dataclass(frozen=True)
class CalibrationReport:
    pearson: float | None
    spearman: float | None
    bin_sigma: np.ndarray
    bin_rmse: np.ndarray
    retained_fraction: np.ndarray
    retained_rmse: np.ndarray


def calibration_report(sigmas, abs_errors, n_bins: int = 10, curve_points: int | None = None) -> CalibrationReport:
    """Correlation of sigma with |error|, an equal-mass reliability diagram and
    the confidence-error curve (RMSE of the lowest-sigma fraction retained).

    ``curve_points`` evaluates the curve on that many evenly spaced fractions
    instead of at every sample.
    """
    s = np.asarray(sigmas, dtype=float).ravel()
    e = np.abs(np.asarray(abs_errors, dtype=float).ravel())
    if s.shape != e.shape or len(s) < 10:
        raise ValueError("need equal-length inputs with at least 10 points")
    if np.any(s < 0):
        raise ValueError("sigma must be >= 0")
    try:
        pr = stats.correlation(s, e, "pearson").estimate
        sr = stats.correlation(s, e, "spearman").estimate
    except stats.DegenerateData:
        pr = sr = None
    order = np.argsort(s, kind="stable")
    bins = np.array_split(order, n_bins)
    bin_sigma = np.array([s[b].mean() for b in bins])
    bin_rmse = np.array([math.sqrt(float(np.mean(e[b] ** 2))) for b in bins])
    n = len(s)
    cum = np.sqrt(np.cumsum(e[order] ** 2) / np.arange(1, n + 1))
    frac = np.arange(1, n + 1) / n
    if curve_points is not None:
        take = np.ceil(np.linspace(1.0 / curve_points, 1.0, curve_points) * n).astype(int) - 1
        frac, cum = frac[take], cum[take]
    return CalibrationReport(pr, sr, bin_sigma, bin_rmse, frac, cum)


@dataclass(frozen=True)
class ImportanceReport:
    names: list[str]
    importance: np.ndarray  # mean RMSE increase
    ranking: list[str]


def permutation_importance(predict, X, y, names=None, seed: int = 0, repeats: int = 10) -> ImportanceReport:
    """Mean RMSE increase over ``repeats`` seeded shuffles of each column."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
    base = math.sqrt(float(np.mean((predict(X) - y) ** 2)))
    rng = np.random.default_rng(seed)
    imp = np.zeros(X.shape[1])
    for j in range(X.shape[1]):
        for _ in range(repeats):
            Xp = X.copy()
            Xp[:, j] = X[rng.permutation(len(X)), j]
            imp[j] += math.sqrt(float(np.mean((predict(Xp) - y) ** 2))) - base
    imp /= repeats
    order = np.argsort(-imp, kind="stable")
    return ImportanceReport(names, imp, [names[j] for j in order])
