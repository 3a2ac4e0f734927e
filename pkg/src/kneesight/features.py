"""Per-cycle descriptors and per-cell capacity trajectories."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .ingest import Cycle, RawTimeSeries, SegmentationConfig, segment_cycles
from .records import CapacityTrajectory, CycleFeatures

log = logging.getLogger(__name__)

EOL_THRESHOLD = 0.80


class DescriptorError(ValueError):
    pass


@dataclass(frozen=True)
class DescriptorConfig:
    min_samples: int = 5
    ir_window: float = 10.0  # seconds after discharge onset
    eod_fraction: float = 0.1  # final share of delivered capacity
    plateau_band: float = 0.05  # V/Ah
    mid_fraction: tuple[float, float] = (0.25, 0.75)
    grid_points: int = 201


def _check_discharge(cycle: Cycle) -> None:
    if cycle.kind != "discharge":
        raise ValueError(f"cycle {cycle.cycle_index} of {cycle.cell_id} is not a discharge segment")
    if len(cycle) < 2:
        raise ValueError("at least two samples are needed to integrate")


def _cumulative_ah(cycle: Cycle) -> np.ndarray:
    dq = 0.5 * (np.abs(cycle.current[1:]) + np.abs(cycle.current[:-1])) * np.diff(cycle.t)
    return np.concatenate([[0.0], np.cumsum(dq)]) / 3600.0


def delivered_capacity(cycle: Cycle) -> float:
    """Trapezoidal integral of |I| dt in ampere-hours."""
    _check_discharge(cycle)
    return float(np.trapezoid(np.abs(cycle.current), cycle.t) / 3600.0)


def energy_throughput(cycle: Cycle) -> float:
    """Trapezoidal integral of V |I| dt in watt-hours."""
    _check_discharge(cycle)
    return float(np.trapezoid(cycle.voltage * np.abs(cycle.current), cycle.t) / 3600.0)


def shape_descriptors(cycle: Cycle, cfg: DescriptorConfig = DescriptorConfig()) -> tuple[float, float, float, float]:
    """``(dv_ir, eod_slope, plateau_ah, mid_curvature)`` of one discharge curve.

    ``eod_slope`` is dV/dQ (V/Ah) over the last ``eod_fraction`` of delivered
    capacity; ``plateau_ah`` sums the capacity intervals whose |dV/dQ| stays
    below ``plateau_band``; ``mid_curvature`` averages d2V/dQ2 over the middle
    capacity window of a uniform resampling.
    """
    _check_discharge(cycle)
    if len(cycle) < cfg.min_samples:
        raise DescriptorError(f"need >= {cfg.min_samples} samples, got {len(cycle)}")
    t, v = cycle.t, cycle.voltage
    if t[-1] - t[0] < cfg.ir_window:
        raise DescriptorError("IR window exceeds segment duration")
    q = _cumulative_ah(cycle)
    qtot = q[-1]
    if not qtot > 0:
        raise DescriptorError("zero-capacity cycle")

    dv_ir = cycle.entry_voltage - float(np.interp(t[0] + cfg.ir_window, t, v))

    tail = q >= (1.0 - cfg.eod_fraction) * qtot
    if tail.sum() < 2:
        tail[-2:] = True
    eod_slope = float(np.polyfit(q[tail], v[tail], 1)[0])

    dq = np.diff(q)
    ok = dq > 0
    slopes = np.diff(v)[ok] / dq[ok]
    plateau = float(dq[ok][np.abs(slopes) < cfg.plateau_band].sum())
    plateau = min(max(plateau, 0.0), qtot)

    grid = np.linspace(0.0, qtot, cfg.grid_points)
    keep = np.concatenate([[True], dq > 0])
    vg = np.interp(grid, q[keep], v[keep])
    h = grid[1] - grid[0]
    d2 = (vg[2:] - 2.0 * vg[1:-1] + vg[:-2]) / h**2
    lo, hi = cfg.mid_fraction
    mid = (grid[1:-1] >= lo * qtot) & (grid[1:-1] <= hi * qtot)
    mid_curv = float(d2[mid].mean()) if mid.any() else math.nan
    return dv_ir, eod_slope, plateau, mid_curv


def cycle_features(
    cycle: Cycle,
    q0: float,
    dataset_tag: str = "",
    cfg: DescriptorConfig = DescriptorConfig(),
) -> CycleFeatures:
    q = delivered_capacity(cycle)
    e = energy_throughput(cycle)
    try:
        desc = shape_descriptors(cycle, cfg)
    except DescriptorError as exc:
        log.info("cell %s cycle %d: descriptors missing (%s)", cycle.cell_id, cycle.cycle_index, exc)
        desc = (math.nan,) * 4
    temp = math.nan
    if cycle.temperature is not None and np.any(np.isfinite(cycle.temperature)):
        temp = float(np.nanmean(cycle.temperature))
    return CycleFeatures(
        cell_id=cycle.cell_id,
        cycle_index=cycle.cycle_index,
        q_ah=q,
        soh=q / q0,
        e_wh=e,
        dv_ir=desc[0],
        eod_slope=desc[1],
        plateau_ah=desc[2],
        mid_curvature=desc[3],
        mean_current_a=float(np.mean(cycle.current)),
        mean_temp_c=temp,
        dataset_tag=dataset_tag,
    )


def extract_cycle_table(
    series: list[RawTimeSeries],
    seg: SegmentationConfig = SegmentationConfig(),
    desc: DescriptorConfig = DescriptorConfig(),
    rated_q0: dict[str, float] | None = None,
) -> list[CycleFeatures]:
    """Segment every record and emit one row per discharge cycle."""
    rows: list[CycleFeatures] = []
    for s in series:
        discharges = [c for c in segment_cycles(s, seg) if c.kind == "discharge"]
        caps = [(c, delivered_capacity(c)) for c in discharges]
        kept = [(c, q) for c, q in caps if q > 0]
        if len(kept) < len(caps):
            log.info("cell %s: dropped %d zero-capacity cycles", s.cell_id, len(caps) - len(kept))
        if not kept:
            log.warning("cell %s: no usable discharge cycles", s.cell_id)
            continue
        q0 = (rated_q0 or {}).get(s.cell_id, kept[0][1])
        rows += [cycle_features(c, q0, s.dataset_tag, desc) for c, _ in kept]
    return rows


def detect_eol(traj: CapacityTrajectory, threshold: float = EOL_THRESHOLD) -> int | None:
    """First cycle index whose SOH is strictly below ``threshold``."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    below = np.flatnonzero(traj.soh < threshold)
    return int(traj.cycles[below[0]]) if len(below) else None


def build_trajectory(
    rows: list[CycleFeatures],
    q0_rule: str = "first",
    rated_q0: float | None = None,
    eol_threshold: float = EOL_THRESHOLD,
) -> CapacityTrajectory:
    """SOH series ``q_ah / Q0`` for one cell, annotated with its EOL cycle.

    ``q0_rule`` is ``"first"`` (first observed discharge capacity) or
    ``"rated"`` (uses ``rated_q0``).
    """
    if not rows:
        raise ValueError("no rows")
    ids = {r.cell_id for r in rows}
    if len(ids) != 1:
        raise ValueError(f"mixed cell ids: {sorted(ids)}")
    rows = sorted(rows, key=lambda r: r.cycle_index)
    if q0_rule == "first":
        q0 = rows[0].q_ah
    elif q0_rule == "rated":
        if rated_q0 is None:
            raise ValueError("q0_rule='rated' requires rated_q0")
        q0 = rated_q0
    else:
        raise ValueError(f"unknown q0 rule {q0_rule!r}")
    if not q0 > 0:
        raise ValueError(f"{rows[0].cell_id}: Q0 must be positive")
    traj = CapacityTrajectory(
        rows[0].cell_id,
        float(q0),
        [r.cycle_index for r in rows],
        [r.q_ah / q0 for r in rows],
        dataset_tag=rows[0].dataset_tag,
    )
    traj.eol_cycle = detect_eol(traj, eol_threshold)
    return traj
