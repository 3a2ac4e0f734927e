"""Row types shared between ingestion, feature extraction and the CLI."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

CYCLE_COLUMNS = (
    "cell_id",
    "cycle_index",
    "q_ah",
    "soh",
    "e_wh",
    "dv_ir",
    "eod_slope",
    "plateau_ah",
    "mid_curvature",
    "mean_current_a",
    "mean_temp_c",
    "dataset_tag",
)


@dataclass(frozen=True)
class CycleFeatures:
    cell_id: str
    cycle_index: int
    q_ah: float
    soh: float
    e_wh: float
    dv_ir: float = math.nan
    eod_slope: float = math.nan
    plateau_ah: float = math.nan
    mid_curvature: float = math.nan
    mean_current_a: float = math.nan
    mean_temp_c: float = math.nan
    dataset_tag: str = ""

    def __post_init__(self):
        if not self.q_ah >= 0:
            raise ValueError(f"{self.cell_id}/{self.cycle_index}: q_ah must be >= 0")
        if not self.e_wh >= 0:
            raise ValueError(f"{self.cell_id}/{self.cycle_index}: e_wh must be >= 0")
        if not self.soh > 0:
            raise ValueError(f"{self.cell_id}/{self.cycle_index}: soh must be > 0")
        p = self.plateau_ah
        if not math.isnan(p) and not (0.0 <= p <= self.q_ah):
            raise ValueError(f"{self.cell_id}/{self.cycle_index}: plateau_ah outside [0, q_ah]")


@dataclass
class CapacityTrajectory:
    """Per-cell (cycle, SOH) series with optional EOL / knee annotations."""

    cell_id: str
    q0: float
    cycles: np.ndarray
    soh: np.ndarray
    eol_cycle: int | None = None
    knee_cycle: int | None = None
    dataset_tag: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.cycles = np.asarray(self.cycles, dtype=int)
        self.soh = np.asarray(self.soh, dtype=float)
        if self.cycles.shape != self.soh.shape or self.cycles.ndim != 1:
            raise ValueError("cycles and soh must be equal-length vectors")
        if len(self.cycles) > 1 and np.any(np.diff(self.cycles) <= 0):
            raise ValueError(f"{self.cell_id}: cycle indices must be strictly increasing")
        if not self.q0 > 0:
            raise ValueError(f"{self.cell_id}: q0 must be positive")

    def __len__(self) -> int:
        return len(self.cycles)

    @property
    def capacity(self) -> np.ndarray:
        return self.soh * self.q0

    def prefix(self, n: int) -> "CapacityTrajectory":
        """First ``n`` points only; annotations derived from later cycles are dropped."""
        return CapacityTrajectory(self.cell_id, self.q0, self.cycles[:n].copy(), self.soh[:n].copy(), dataset_tag=self.dataset_tag)
