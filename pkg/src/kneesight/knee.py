"""Knee-onset detection on capacity trajectories.

The trajectory is smoothed (centred moving average or a fitted INR), the
curvature ``Q'' / (1 + Q'^2)^1.5`` is evaluated per cycle, and the knee is the
earliest cycle whose absolute curvature reaches the threshold while the next
cycle reaches at least half of it. The signal is normalised capacity (SOH).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import inr
from .records import CapacityTrajectory

SMOOTHERS = ("moving_average", "inr_fit")
MEASURES = ("curvature", "second_derivative")

# dense, dropout-free capacity surrogate used by the inr_fit smoother
DEFAULT_SMOOTHER_INR = inr.InrConfig(
    variant="mlp_posenc",
    hidden_layers=2,
    hidden_width=32,
    posenc_frequencies=2,
    dropout_p=0.0,
    epochs=400,
    learning_rate=1e-2,
)


@dataclass(frozen=True)
class KneeConfig:
    smoother: str = "moving_average"
    window: int = 5
    tau: float | None = None  # absolute threshold; None uses the baseline rule
    tau_factor: float = 3.0
    tau_floor: float = 1e-12
    tau_peak_fraction: float = 0.4  # floor relative to the largest |kappa|
    min_prefix: int = 3
    measure: str = "curvature"
    inr_config: inr.InrConfig = field(default=DEFAULT_SMOOTHER_INR)

    def __post_init__(self):
        if self.smoother not in SMOOTHERS:
            raise ValueError(f"unknown smoother {self.smoother!r}")
        if self.measure not in MEASURES:
            raise ValueError(f"unknown measure {self.measure!r}")
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("window must be an odd integer >= 3")
        if self.tau is not None and not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.tau_floor > 0 or not self.tau_factor > 0:
            raise ValueError("tau_factor and tau_floor must be positive")
        if not 0.0 <= self.tau_peak_fraction <= 1.0:
            raise ValueError("tau_peak_fraction must lie in [0, 1]")
        if self.min_prefix < 1:
            raise ValueError("min_prefix must be >= 1")


@dataclass(frozen=True)
class KneeReport:
    knee_cycle: int | None
    cycles: np.ndarray  # where the measure was evaluated
    kappa: np.ndarray
    threshold_used: float
    smoother_used: str
    extrapolated: bool = False

    @property
    def curvature_series(self) -> list[tuple[int, float]]:
        return [(int(c), float(k)) for c, k in zip(self.cycles, self.kappa)]


def moving_average(y, window: int) -> np.ndarray:
    """Centred mean; near the ends the window shrinks symmetrically."""
    y = np.asarray(y, dtype=float)
    n = len(y)
    c = np.concatenate([[0.0], np.cumsum(y)])
    i = np.arange(n)
    half = np.minimum(window // 2, np.minimum(i, n - 1 - i))
    return (c[i + half + 1] - c[i - half]) / (2 * half + 1)


def smooth_trajectory(traj: CapacityTrajectory, cfg: KneeConfig = KneeConfig()):
    """``(cycles, smoothed SOH)``; for ``inr_fit`` the fitted model is returned too."""
    x = traj.cycles.astype(float)
    if cfg.smoother == "moving_average":
        if len(traj) < cfg.window:
            raise ValueError(f"need at least {cfg.window} points, got {len(traj)}")
        return traj.cycles, moving_average(traj.soh, cfg.window)
    model = _fit_smoother(x, traj.soh, cfg.inr_config)
    return traj.cycles, inr.forward(model, x)[:, 0]


def _fit_smoother(x, y, icfg: inr.InrConfig) -> inr.InrModel:
    if len(x) < 4:
        raise ValueError(f"need at least 4 points, got {len(x)}")
    icfg = replace(icfg, input_dim=1, output_dim=1)
    model, _ = inr.train(inr.init_model(icfg), (np.reshape(x, (-1, 1)), np.reshape(y, (-1, 1))))
    return model


def _central(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First/second derivatives at interior nodes of a possibly uneven grid."""
    hm = x[1:-1] - x[:-2]
    hp = x[2:] - x[1:-1]
    sm = (y[1:-1] - y[:-2]) / hm
    sp = (y[2:] - y[1:-1]) / hp
    d1 = (sm * hp + sp * hm) / (hm + hp)
    d2 = 2.0 * (sp - sm) / (hm + hp)
    return d1, d2


def _measure(d1, d2, measure: str):
    if measure == "second_derivative":
        return d2
    return d2 / (1.0 + d1 * d1) ** 1.5


def curvature_series(x, y, measure: str = "curvature") -> tuple[np.ndarray, np.ndarray]:
    """Measure at every interior point: ``(x[1:-1], kappa)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 3:
        raise ValueError("need at least 3 points")
    d1, d2 = _central(x, y)
    return x[1:-1], _measure(d1, d2, measure)


def curvature(series, k, measure: str = "curvature") -> float:
    """Curvature of ``series`` at abscissa ``k``.

    ``series`` is either an ``(x, y)`` pair of arrays, evaluated by central
    differences at an interior node, or a fitted ``InrModel``, differentiated
    exactly.
    """
    if isinstance(series, inr.InrModel):
        _, d1, d2 = inr.derivatives(series, np.array([[float(k)]]))
        return float(_measure(d1[0, 0], d2[0, 0], measure))
    x = np.asarray(series[0], dtype=float)
    y = np.asarray(series[1], dtype=float)
    hit = np.flatnonzero(x == k)
    if len(hit) == 0:
        raise ValueError(f"{k} is not a grid point")
    i = int(hit[0])
    if i == 0 or i == len(x) - 1:
        raise ValueError(f"{k} is a boundary point; both neighbours are required")
    d1, d2 = _central(x[i - 1 : i + 2], y[i - 1 : i + 2])
    return float(_measure(d1[0], d2[0], measure))


def resolve_tau(kappa: np.ndarray, cfg: KneeConfig) -> float:
    """Absolute override, else ``tau_factor`` x median |kappa| over the first third.

    The baseline rule collapses to zero on noiseless curves, so it is floored
    at ``tau_peak_fraction`` of the peak |kappa| (which keeps it scale-free)
    and finally at ``tau_floor``.
    """
    if cfg.tau is not None:
        return float(cfg.tau)
    a = np.abs(kappa)
    head = a[: max(1, len(a) // 3)]
    return max(cfg.tau_factor * float(np.median(head)), cfg.tau_peak_fraction * float(a.max()), cfg.tau_floor)


def first_exceedance(cycles: np.ndarray, kappa: np.ndarray, tau: float, start) -> int | None:
    """Earliest cycle >= ``start`` with |kappa| >= tau whose successor has |kappa| >= tau/2."""
    a = np.abs(kappa)
    hit = (a[:-1] >= tau) & (a[1:] >= 0.5 * tau) & (cycles[:-1] >= start)
    idx = np.flatnonzero(hit)
    return int(cycles[idx[0]]) if len(idx) else None


def detect_knee(traj: CapacityTrajectory, cfg: KneeConfig = KneeConfig()) -> KneeReport:
    need = max(cfg.window, cfg.min_prefix + 2, 4 if cfg.smoother == "inr_fit" else 0)
    if len(traj) < need:
        raise ValueError(f"trajectory {traj.cell_id} has {len(traj)} points, need {need}")
    if cfg.smoother == "moving_average":
        x, y = smooth_trajectory(traj, cfg)
        cyc, kappa = curvature_series(x, y, cfg.measure)
        cyc = cyc.astype(int)
    else:
        model = _fit_smoother(traj.cycles.astype(float), traj.soh, cfg.inr_config)
        # fitted derivatives ring at the record ends; keep the same margin a
        # moving-average window of this width would lose
        h = cfg.window // 2
        cyc = traj.cycles[h : len(traj) - h]
        _, d1, d2 = inr.derivatives(model, cyc.astype(float).reshape(-1, 1))
        kappa = _measure(d1[:, 0], d2[:, 0], cfg.measure)
    tau = resolve_tau(kappa, cfg)
    knee = first_exceedance(cyc, kappa, tau, traj.cycles[0] + cfg.min_prefix)
    return KneeReport(knee, cyc, kappa, tau, cfg.smoother)


# prefix-only surrogate: a single encoding octave keeps extrapolation tame
DEFAULT_EARLY_INR = replace(DEFAULT_SMOOTHER_INR, hidden_width=16, posenc_frequencies=1, epochs=200)


def early_life_knee(
    prefix: CapacityTrajectory,
    cfg: KneeConfig = KneeConfig(),
    inr_cfg: inr.InrConfig | None = None,
) -> KneeReport:
    """Knee estimate from the first N cycles only.

    The prefix is split into its least-squares line and a residual; an INR
    fitted to the residual is extrapolated over ``3N`` cycles (on the prefix's
    median cycle spacing) and the usual criterion is applied to the exact
    curvature of line plus residual. The line carries the trend beyond the
    data, so a straight prefix extrapolates straight instead of inheriting
    the network's saturation. Inputs are normalised over the whole horizon,
    so the observed cycles occupy the first third of the input range.
    """
    n = len(prefix)
    if n < 4:
        raise ValueError(f"prefix too short: {n} < 4")
    x = prefix.cycles.astype(float)
    y = prefix.soh
    step = float(np.median(np.diff(x)))
    grid = x[0] + step * np.arange(3 * n)
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    icfg = replace(inr_cfg or DEFAULT_EARLY_INR, input_dim=1, output_dim=1)
    model = inr.init_model(icfg)
    model.in_shift = np.array([0.5 * (grid[0] + grid[-1])])
    model.in_scale = np.array([2.0 / (grid[-1] - grid[0])])
    sd = float(resid.std())
    model.out_shift = np.array([0.0])
    model.out_scale = np.array([sd if sd > 0 else 1.0])
    model, _ = inr.train(model, (x.reshape(-1, 1), resid.reshape(-1, 1)), fit_norms=False)
    _, d1, d2 = inr.derivatives(model, grid.reshape(-1, 1))
    kappa = _measure(d1[:, 0] + slope, d2[:, 0], cfg.measure)
    tau = resolve_tau(kappa, cfg)
    cyc = np.rint(grid).astype(int)
    knee = first_exceedance(cyc, kappa, tau, x[0] + cfg.min_prefix)
    return KneeReport(knee, cyc, kappa, tau, "inr_fit", extrapolated=True)


KNEE_COLUMNS = ("cell_id", "knee_cycle", "threshold", "smoother")


def knee_row(cell_id: str, report: KneeReport) -> list:
    return [cell_id, report.knee_cycle, report.threshold_used, report.smoother_used]
