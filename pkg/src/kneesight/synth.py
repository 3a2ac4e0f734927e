"""Synthetic two-phase capacity fade with known knee and EOL.

Normalised capacity follows ``1 - a*k - b*max(0, k - k*)**p + noise``: a
linear phase, then an accelerating branch after the knee cycle ``k*``. The
noiseless curve gives exact ground truth for the knee and EOL detectors, and
populations with shifted parameters stand in for heterogeneous datasets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .features import EOL_THRESHOLD, detect_eol
from .records import CapacityTrajectory, CycleFeatures
from .reliability import LifetimeSample


@dataclass(frozen=True)
class TrajectorySpec:
    q0: float = 1.0
    rate: float = 0.004  # linear fade per cycle
    knee: int | None = None
    accel: float = 0.0
    noise_sd: float = 0.0
    length: int = 60
    seed: int = 0
    exponent: float = 2.0

    def __post_init__(self):
        if self.rate < 0 or self.accel < 0 or self.noise_sd < 0:
            raise ValueError("rate, accel and noise_sd must be >= 0")
        if self.length < 1 or not self.q0 > 0:
            raise ValueError("length >= 1 and q0 > 0 required")


def noiseless_soh(spec: TrajectorySpec, k) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    soh = 1.0 - spec.rate * k
    if spec.knee is not None and spec.accel > 0:
        soh = soh - spec.accel * np.maximum(0.0, k - spec.knee) ** spec.exponent
    return soh


def true_knee(spec: TrajectorySpec) -> int | None:
    if spec.knee is None or spec.accel <= 0 or spec.knee >= spec.length - 1:
        return None
    return int(spec.knee)


def true_eol(spec: TrajectorySpec, threshold: float = EOL_THRESHOLD) -> int | None:
    """First integer cycle where the noiseless SOH is below ``threshold``, in closed form."""
    drop = 1.0 - threshold
    a, b = spec.rate, spec.accel
    has_knee = spec.knee is not None and b > 0
    if a > 0 and (not has_knee or drop / a <= spec.knee):
        root = drop / a
    elif has_knee:
        ks = spec.knee
        if spec.exponent == 2.0:
            # a*k + b*(k - ks)^2 = drop, larger root
            u = (-a + math.sqrt(a * a + 4.0 * b * (drop - a * ks))) / (2.0 * b)
        else:
            u = _bisect(lambda v: a * (ks + v) + b * v**spec.exponent - drop, 0.0, 1e9)
        root = ks + u
    else:
        return None
    k = math.floor(root) + 1
    # settle floating-point ties at an exactly integral root
    if k - 1 >= 0 and noiseless_soh(spec, k - 1) < threshold:
        k -= 1
    if not noiseless_soh(spec, k) < threshold:
        k += 1
    return int(k) if k < spec.length else None


def _bisect(f, lo, hi, iters=200):
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def gen_trajectory(spec: TrajectorySpec, cell_id: str = "cell", dataset_tag: str = "synthetic") -> CapacityTrajectory:
    """Sample one noisy trajectory; ground truth lives in ``meta``."""
    rng = np.random.default_rng(spec.seed)
    k = np.arange(spec.length)
    soh = noiseless_soh(spec, k)
    if spec.noise_sd > 0:
        soh = soh + rng.normal(0.0, spec.noise_sd, size=spec.length)
    soh = np.clip(soh, 0.0, None)
    traj = CapacityTrajectory(cell_id, spec.q0, k, soh, dataset_tag=dataset_tag)
    traj.eol_cycle = detect_eol(traj)
    traj.meta.update(true_knee=true_knee(spec), true_eol=true_eol(spec), spec=spec)
    return traj


@dataclass(frozen=True)
class PopulationSpec:
    """Uniform ranges for per-cell parameters plus a dataset-level shift."""

    n_cells: int = 100
    dataset_tag: str = "synthetic"
    q0: tuple[float, float] = (0.95, 1.05)
    rate: tuple[float, float] = (0.002, 0.006)
    knee: tuple[int, int] = (10, 30)
    accel: tuple[float, float] = (0.002, 0.006)
    knee_fraction: float = 1.0
    knee_fade: tuple[float, float] | None = None  # if set, knee = round(fade / rate)
    noise_sd: float = 0.002
    length: int = 60
    stop_soh: float | None = None  # end the record this many ...
    tail: int = 5  # ... cycles after the noiseless SOH passes stop_soh
    current_a: tuple[float, float] = (1.0, 3.0)
    temp_c: tuple[float, float] = (20.0, 35.0)
    shift: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.n_cells < 1:
            raise ValueError("n_cells must be >= 1")


@dataclass
class SyntheticCell:
    trajectory: CapacityTrajectory
    rows: list[CycleFeatures]
    spec: TrajectorySpec

    @property
    def cell_id(self) -> str:
        return self.trajectory.cell_id


def _cell_rows(traj: CapacityTrajectory, rng: np.random.Generator, current: float, temp: float) -> list[CycleFeatures]:
    rows = []
    for k, s in zip(traj.cycles, traj.soh):
        if not s > 0:
            break
        fade = 1.0 - s
        q = traj.q0 * s
        rows.append(
            CycleFeatures(
                cell_id=traj.cell_id,
                cycle_index=int(k),
                q_ah=q,
                soh=s,
                e_wh=q * (3.6 - 0.2 * fade),
                dv_ir=0.05 + 0.3 * fade + rng.normal(0.0, 0.002),
                eod_slope=-(0.5 + 2.0 * fade),
                plateau_ah=q * min(max(0.6 - 0.8 * fade, 0.0), 1.0),
                mid_curvature=-0.1 - 0.5 * fade,
                mean_current_a=-current + rng.normal(0.0, 0.05),
                mean_temp_c=temp + rng.normal(0.0, 0.5),
                dataset_tag=traj.dataset_tag,
            )
        )
    return rows


def gen_population(pop: PopulationSpec) -> list[SyntheticCell]:
    sh = pop.shift
    cells = []
    for i, ss in enumerate(np.random.SeedSequence(pop.seed).spawn(pop.n_cells)):
        rng = np.random.default_rng(ss)
        has_knee = rng.random() < pop.knee_fraction
        rate = max(0.0, float(rng.uniform(*pop.rate)) + sh.get("rate", 0.0))
        if pop.knee_fade is not None and rate > 0:
            # knee once the linear phase has used up a drawn share of capacity
            knee = int(round(float(rng.uniform(*pop.knee_fade)) / rate))
        else:
            knee = int(rng.integers(pop.knee[0], pop.knee[1] + 1))
        spec = TrajectorySpec(
            q0=float(rng.uniform(*pop.q0)),
            rate=rate,
            knee=knee + int(sh.get("knee", 0)) if has_knee else None,
            accel=max(0.0, float(rng.uniform(*pop.accel)) * sh.get("accel_scale", 1.0)) if has_knee else 0.0,
            noise_sd=max(0.0, pop.noise_sd + sh.get("noise_sd", 0.0)),
            length=pop.length,
            seed=int(rng.integers(2**63)),
        )
        if pop.stop_soh is not None:
            below = np.flatnonzero(noiseless_soh(spec, np.arange(pop.length)) < pop.stop_soh)
            if len(below):
                spec = replace(spec, length=int(min(pop.length, below[0] + pop.tail + 1)))
        traj = gen_trajectory(spec, f"{pop.dataset_tag}-{i:04d}", pop.dataset_tag)
        current = float(rng.uniform(*pop.current_a)) + sh.get("current_a", 0.0)
        temp = float(rng.uniform(*pop.temp_c)) + sh.get("temp_c", 0.0)
        cells.append(SyntheticCell(traj, _cell_rows(traj, rng, current, temp), spec))
    return cells


def gen_weibull(shape: float, scale: float, n: int, seed: int = 0) -> LifetimeSample:
    """Inverse-transform draws ``scale * (-ln U)**(1/shape)``."""
    rng = np.random.default_rng(seed)
    u = 1.0 - rng.random(n)  # (0, 1]
    x = scale * (-np.log(u)) ** (1.0 / shape)
    x = np.where(x > 0, x, np.finfo(float).tiny)
    return LifetimeSample.complete(x)
