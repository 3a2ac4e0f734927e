"""Raw time-series loading, cycle segmentation and the per-cycle table format."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from ._io import parse_float, read_csv_dicts, write_csv
from .records import CYCLE_COLUMNS, CycleFeatures

log = logging.getLogger(__name__)


class IngestError(ValueError):
    pass


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class ColumnMapping:
    cell_id_col: str
    time_col: str
    current_col: str
    voltage_col: str
    temperature_col: str | None = None
    current_scale: float = 1.0
    voltage_scale: float = 1.0
    time_scale: float = 1.0
    discharge_sign: str = "negative"
    dataset_tag: str = ""
    dataset_tag_col: str | None = None

    def __post_init__(self):
        if self.discharge_sign not in ("negative", "positive"):
            raise ValueError("discharge_sign must be 'negative' or 'positive'")

    @classmethod
    def from_json(cls, path) -> "ColumnMapping":
        doc = json.loads(Path(path).read_text())
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise SchemaError(f"unknown mapping keys: {sorted(unknown)}")
        return cls(**doc)


@dataclass(frozen=True)
class RawTimeSeries:
    """Samples of one cell; current is stored with discharge negative."""

    cell_id: str
    dataset_tag: str
    t: np.ndarray
    current: np.ndarray
    voltage: np.ndarray
    temperature: np.ndarray | None = None

    def __post_init__(self):
        if len(self.t) == 0:
            raise IngestError(f"{self.cell_id}: empty series")
        if not (len(self.t) == len(self.current) == len(self.voltage)):
            raise IngestError(f"{self.cell_id}: column lengths differ")
        if self.temperature is not None and len(self.temperature) != len(self.t):
            raise IngestError(f"{self.cell_id}: temperature length differs")
        if len(self.t) > 1 and np.any(np.diff(self.t) <= 0):
            raise IngestError(f"{self.cell_id}: time must be strictly increasing")
        if np.any(~(self.voltage > 0)):
            raise IngestError(f"{self.cell_id}: voltage must be positive")

    def __len__(self) -> int:
        return len(self.t)


@dataclass(frozen=True)
class SegmentationConfig:
    current_threshold: float = 0.01
    min_segment_samples: int = 10
    sign_convention: str = "discharge_negative"

    def __post_init__(self):
        if not self.current_threshold > 0:
            raise ValueError("current_threshold must be positive")
        if self.min_segment_samples < 2:
            raise ValueError("min_segment_samples must be >= 2")
        if self.sign_convention not in ("discharge_negative", "discharge_positive"):
            raise ValueError("unknown sign convention")


@dataclass(frozen=True)
class Cycle:
    cell_id: str
    cycle_index: int
    kind: str
    start: int
    t: np.ndarray
    current: np.ndarray
    voltage: np.ndarray
    temperature: np.ndarray | None
    entry_voltage: float

    def __len__(self) -> int:
        return len(self.t)


def load_timeseries(path, mapping: ColumnMapping) -> list[RawTimeSeries]:
    """Read a CSV of raw samples into one ``RawTimeSeries`` per cell id."""
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    required = [mapping.cell_id_col, mapping.time_col, mapping.current_col, mapping.voltage_col]
    if mapping.temperature_col:
        required.append(mapping.temperature_col)
    if mapping.dataset_tag_col:
        required.append(mapping.dataset_tag_col)
    for col in required:
        if col not in df.columns:
            raise SchemaError(f"missing mandatory column {col!r}")

    def numeric(col: str, allow_empty: bool = False) -> np.ndarray:
        raw = df[col].str.strip()
        vals = pd.to_numeric(raw.replace("", np.nan), errors="coerce").to_numpy(dtype=float)
        bad = np.isnan(vals) & ((raw != "") | (not allow_empty))
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise IngestError(f"unparseable value {df[col].iloc[row]!r} in column {col!r} at row {row}")
        return vals

    t = numeric(mapping.time_col) * mapping.time_scale
    cur = numeric(mapping.current_col) * mapping.current_scale
    if mapping.discharge_sign == "positive":
        cur = -cur
    volt = numeric(mapping.voltage_col) * mapping.voltage_scale
    temp = numeric(mapping.temperature_col, allow_empty=True) if mapping.temperature_col else None
    cells = df[mapping.cell_id_col].to_numpy()
    tags = df[mapping.dataset_tag_col].to_numpy() if mapping.dataset_tag_col else None

    out = []
    for cell in pd.unique(cells):
        rows = np.flatnonzero(cells == cell)
        order = rows[np.argsort(t[rows], kind="stable")]
        ts = t[order]
        dup = np.flatnonzero(np.diff(ts) == 0)
        if len(dup):
            raise IngestError(f"duplicate timestamp {ts[dup[0]]!r} for cell {cell!r} at row {int(order[dup[0] + 1])}")
        tag = str(tags[rows[0]]) if tags is not None else mapping.dataset_tag
        out.append(
            RawTimeSeries(
                str(cell),
                tag,
                ts,
                cur[order],
                volt[order],
                None if temp is None else temp[order],
            )
        )
    return out


def segment_cycles(series: RawTimeSeries, cfg: SegmentationConfig = SegmentationConfig()) -> list[Cycle]:
    """Split a record into charge and discharge runs.

    A run is a maximal stretch of same-sign current with ``|I|`` above the rest
    band; runs shorter than ``min_segment_samples`` are dropped. Discharge and
    charge runs are numbered independently in time order.
    """
    if len(series) == 0:
        raise IngestError("empty series")
    cur = series.current
    if cfg.sign_convention == "discharge_positive":
        cur = -cur
    label = np.where(np.abs(cur) > cfg.current_threshold, np.sign(cur), 0).astype(int)
    edges = np.flatnonzero(np.diff(label)) + 1
    starts = np.concatenate([[0], edges])
    stops = np.concatenate([edges, [len(label)]])

    cycles = []
    counters = {"discharge": 0, "charge": 0}
    for a, b in zip(starts, stops):
        if label[a] == 0 or b - a < cfg.min_segment_samples:
            continue
        kind = "discharge" if label[a] < 0 else "charge"
        # open-circuit entry voltage: last rest sample right before onset
        entry = series.voltage[a - 1] if a > 0 and label[a - 1] == 0 else series.voltage[a]
        cycles.append(
            Cycle(
                series.cell_id,
                counters[kind],
                kind,
                int(a),
                series.t[a:b],
                series.current[a:b] if cfg.sign_convention == "discharge_negative" else -series.current[a:b],
                series.voltage[a:b],
                None if series.temperature is None else series.temperature[a:b],
                float(entry),
            )
        )
        counters[kind] += 1
    return cycles


# ---------------------------------------------------------------------------
# per-cycle table


def write_cycle_table(rows: list[CycleFeatures], path) -> None:
    write_csv(path, CYCLE_COLUMNS, ([getattr(r, c) for c in CYCLE_COLUMNS] for r in rows))


def read_cycle_table(path) -> list[CycleFeatures]:
    header, raw = read_csv_dicts(path)
    missing = [c for c in CYCLE_COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"missing column {missing[0]!r}")
    extra = [c for c in header if c not in CYCLE_COLUMNS]
    if extra:
        raise SchemaError(f"unknown column {extra[0]!r}")
    out = []
    for r in raw:
        vals = {c: parse_float(r[c]) for c in CYCLE_COLUMNS[2:-1]}
        out.append(
            CycleFeatures(
                cell_id=r["cell_id"],
                cycle_index=int(r["cycle_index"]),
                dataset_tag=r["dataset_tag"],
                **vals,
            )
        )
    return out


def group_by_cell(rows: list[CycleFeatures]) -> dict[str, list[CycleFeatures]]:
    """Rows per cell id, in first-appearance order, sorted by cycle index."""
    cells: dict[str, list[CycleFeatures]] = {}
    for r in rows:
        cells.setdefault(r.cell_id, []).append(r)
    return {k: sorted(v, key=lambda r: r.cycle_index) for k, v in cells.items()}

