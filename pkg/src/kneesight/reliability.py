"""Population lifetime analysis on end-of-life cycle counts.

Two-parameter (location fixed at zero) Weibull and lognormal maximum
likelihood fits on complete data, plus the Kaplan-Meier product-limit
estimator, which also accepts right-censored observations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .specfun import norm_sf


class DegenerateSample(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class LifetimeSample:
    values: np.ndarray
    censored: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        c = np.asarray(self.censored, dtype=bool)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "censored", c)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("lifetime sample must be a non-empty vector")
        if c.shape != v.shape:
            raise ValueError("censoring flags must match values")
        if not np.all(v > 0):
            raise ValueError("lifetimes must be positive")

    @classmethod
    def complete(cls, values) -> "LifetimeSample":
        v = np.asarray(values, dtype=float)
        return cls(v, np.zeros(v.shape, dtype=bool))

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class LifetimeFit:
    family: str
    shape: float  # weibull k, or lognormal s
    scale: float  # weibull lambda, or exp(mu)
    loglik: float
    n: int
    loc: float = 0.0

    @property
    def mu(self) -> float:
        return math.log(self.scale)


@dataclass(frozen=True)
class KaplanMeierCurve:
    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray

    def __call__(self, t: float) -> float:
        i = np.searchsorted(self.times, t, side="right")
        return 1.0 if i == 0 else float(self.survival[i - 1])


def kaplan_meier(sample: LifetimeSample) -> KaplanMeierCurve:
    """Product-limit survival estimate at each distinct event time."""
    t = sample.values
    event = ~sample.censored
    times = np.unique(t[event])
    at_risk = np.array([np.sum(t >= u) for u in times], dtype=int)
    deaths = np.array([np.sum((t == u) & event) for u in times], dtype=int)
    # Between censorings the product telescopes to (survivors / block risk set),
    # so each step is one rounded division; uncensored data gives 1 - ECDF exactly.
    surv = np.empty(len(times))
    base, base_n, left = 1.0, len(t), len(t)
    for i, (n_i, d_i) in enumerate(zip(at_risk, deaths)):
        if n_i != left:
            base = base * left / base_n
            base_n = n_i
        left = n_i - d_i
        surv[i] = base * left / base_n
    return KaplanMeierCurve(times, surv, at_risk, deaths)


def _weibull_profile_score(k: float, x: np.ndarray, logx: np.ndarray) -> tuple[float, float]:
    """g(k) = sum x^k ln x / sum x^k - 1/k - mean ln x, and g'(k)."""
    # rescale to avoid overflow of x^k
    w = np.exp(k * (logx - logx.max()))
    s0 = w.sum()
    s1 = (w * logx).sum()
    s2 = (w * logx * logx).sum()
    g = s1 / s0 - 1.0 / k - logx.mean()
    dg = s2 / s0 - (s1 / s0) ** 2 + 1.0 / k**2
    return g, dg


def _weibull_shape(x: np.ndarray, tol: float = 1e-10, max_iter: int = 100) -> float:
    logx = np.log(x)
    k = 1.0
    for _ in range(max_iter):
        g, dg = _weibull_profile_score(k, x, logx)
        step = g / dg
        k_new = k - step
        if not (1e-4 < k_new < 1e4) or not math.isfinite(k_new):
            return _weibull_shape_bisect(x, logx, tol)
        if abs(k_new - k) <= tol * max(1.0, k_new):
            return k_new
        k = k_new
    return _weibull_shape_bisect(x, logx, tol)


def _weibull_shape_bisect(x: np.ndarray, logx: np.ndarray, tol: float) -> float:
    # g is increasing in k, negative near 0 and positive for large k
    lo, hi = 1e-4, 1e4
    glo = _weibull_profile_score(lo, x, logx)[0]
    ghi = _weibull_profile_score(hi, x, logx)[0]
    if glo > 0 or ghi < 0:
        raise ConvergenceError("Weibull shape score has no root in (1e-4, 1e4)")
    for _ in range(400):
        mid = math.sqrt(lo * hi)
        if _weibull_profile_score(mid, x, logx)[0] < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * hi:
            return 0.5 * (lo + hi)
    raise ConvergenceError("Weibull shape bisection did not converge")


def _complete_values(sample: LifetimeSample) -> np.ndarray:
    if sample.censored.any():
        raise ValueError("parametric fits require complete (uncensored) data")
    x = sample.values
    if len(x) < 3:
        raise ValueError("need at least 3 lifetimes")
    if np.all(x == x[0]):
        raise DegenerateSample("all lifetimes are equal")
    return x


def fit_lifetime(family: str, sample: LifetimeSample) -> LifetimeFit:
    """Maximum-likelihood ``weibull`` or ``lognormal`` fit with location 0."""
    x = _complete_values(sample)
    n = len(x)
    logx = np.log(x)
    if family == "weibull":
        k = _weibull_shape(x)
        lam = float(np.mean(x**k) ** (1.0 / k))
        fit = LifetimeFit("weibull", k, lam, 0.0, n)
    elif family == "lognormal":
        mu = float(logx.mean())
        s = float(np.sqrt(np.mean((logx - mu) ** 2)))
        fit = LifetimeFit("lognormal", s, math.exp(mu), 0.0, n)
    else:
        raise ValueError(f"unknown family {family!r}")
    ll = float(np.sum(np.log(pdf(fit, x))))
    return LifetimeFit(fit.family, fit.shape, fit.scale, ll, n)


def _check_t(t, strictly_positive: bool = False) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if strictly_positive and np.any(t <= 0):
        raise ValueError("t must be > 0")
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    return t


def _scalar(t_in, out):
    return float(out) if np.ndim(t_in) == 0 else out


def survival(fit: LifetimeFit, t):
    t_in = t
    t = _check_t(t)
    if fit.family == "weibull":
        out = np.exp(-((t / fit.scale) ** fit.shape))
    else:
        with np.errstate(divide="ignore"):
            z = (np.log(t) - fit.mu) / fit.shape
        out = norm_sf(z)
    return _scalar(t_in, out)


def pdf(fit: LifetimeFit, t):
    t_in = t
    t = _check_t(t)
    k, lam = fit.shape, fit.scale
    if fit.family == "weibull":
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (k / lam) * (t / lam) ** (k - 1.0) * np.exp(-((t / lam) ** k))
    else:
        with np.errstate(divide="ignore"):
            z = (np.log(t) - fit.mu) / k
            out = np.where(t > 0, np.exp(-0.5 * z * z) / (t * k * math.sqrt(2.0 * math.pi)), 0.0)
    return _scalar(t_in, out)


def hazard(fit: LifetimeFit, t):
    """Instantaneous failure rate h(t) = f(t) / S(t)."""
    t_in = t
    t = _check_t(t, strictly_positive=True)
    if fit.family == "weibull":
        k, lam = fit.shape, fit.scale
        out = (k / lam) * (t / lam) ** (k - 1.0)
    else:
        out = pdf(fit, t) / survival(fit, t)
    return _scalar(t_in, out)


def median_lifetime(fit: LifetimeFit) -> float:
    if fit.family == "weibull":
        return fit.scale * math.log(2.0) ** (1.0 / fit.shape)
    return fit.scale


def population_summary(sample: LifetimeSample) -> tuple[int, float, float]:
    """``(n, mean, sample std with n-1)``."""
    x = sample.values
    sd = float(np.std(x, ddof=1)) if len(x) > 1 else math.nan
    return len(x), float(np.mean(x)), sd


RELIABILITY_COLUMNS = (
    "dataset",
    "n_cells",
    "eol_mean",
    "eol_std",
    "weibull_c",
    "weibull_loc",
    "weibull_scale",
    "lognorm_s",
    "lognorm_loc",
    "lognorm_scale",
)


def reliability_row(dataset: str, sample: LifetimeSample) -> list:
    n, mean, sd = population_summary(sample)
    w = fit_lifetime("weibull", sample)
    ln = fit_lifetime("lognormal", sample)
    return [dataset, n, mean, sd, w.shape, w.loc, w.scale, ln.shape, ln.loc, ln.scale]
