"""Design matrices for SOH / RUL regression with an explicit leakage contract.

Early-life rows are computed from the first N points of a cell and nothing
else; ``audit_leakage`` re-derives them from truncated and tampered copies of
each cell to prove it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..inr import InrConfig
from ..knee import DEFAULT_EARLY_INR, KneeConfig, detect_knee, early_life_knee
from ..records import CapacityTrajectory, CycleFeatures

log = logging.getLogger(__name__)

EARLY_WINDOWS = (5, 10, 20)


class MissingEOL(ValueError):
    pass


@dataclass
class CellRecord:
    """A trajectory plus (optionally) its per-cycle rows for stressor means."""

    trajectory: CapacityTrajectory
    rows: list[CycleFeatures] | None = None

    @property
    def cell_id(self) -> str:
        return self.trajectory.cell_id


def as_cell(obj) -> CellRecord:
    if isinstance(obj, CellRecord):
        return obj
    if isinstance(obj, CapacityTrajectory):
        return CellRecord(obj)
    return CellRecord(obj.trajectory, getattr(obj, "rows", None))


@dataclass(frozen=True)
class FeatureOptions:
    knee: KneeConfig = KneeConfig()
    early_inr: InrConfig = DEFAULT_EARLY_INR
    early_knee: bool = True
    stressors: bool = True


@dataclass
class SupervisedDataset:
    cell_ids: np.ndarray
    X: np.ndarray
    y: np.ndarray
    feature_names: list[str]
    target_kind: str
    early_window: int
    leakage_class: str
    cycles: np.ndarray  # reference cycle k of each row
    tags: np.ndarray
    options: FeatureOptions = field(default_factory=FeatureOptions)

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, mask) -> "SupervisedDataset":
        m = np.asarray(mask)
        return replace(
            self,
            cell_ids=self.cell_ids[m],
            X=self.X[m],
            y=self.y[m],
            cycles=self.cycles[m],
            tags=self.tags[m],
        )


def _slope(x: np.ndarray, y: np.ndarray) -> float:
    if len(x) < 2:
        return 0.0
    xc = x - x.mean()
    return float(xc @ (y - y.mean()) / (xc @ xc))


def early_feature_names(n: int, opts: FeatureOptions, stressors: bool) -> list[str]:
    names = [f"soh_{i + 1}" for i in range(n)] + ["q0", "slope", "slope_late", "quad"]
    if stressors:
        names += ["mean_current_a", "mean_temp_c"]
    if opts.early_knee:
        names += ["knee_early", "knee_early_found"]
    return names


def early_features(cell: CellRecord, n: int, opts: FeatureOptions, stressors: bool) -> np.ndarray:
    """Feature vector from the first ``n`` points of ``cell``."""
    tr = cell.trajectory
    if len(tr) < n:
        raise ValueError(f"{tr.cell_id}: {len(tr)} points, window needs {n}")
    pre = tr.prefix(n)
    x = (pre.cycles - pre.cycles[0]).astype(float)
    s = pre.soh
    half = n // 2
    quad = float(np.polyfit(x, s, 2)[0]) if n >= 3 else 0.0
    vals = list(s) + [tr.q0, _slope(x, s), _slope(x[half:], s[half:]), quad]
    if stressors:
        last = pre.cycles[-1]
        rows = [r for r in cell.rows if r.cycle_index <= last]
        vals += [
            float(np.mean([r.mean_current_a for r in rows])),
            float(np.mean([r.mean_temp_c for r in rows])),
        ]
    if opts.early_knee:
        rep = early_life_knee(pre, opts.knee, opts.early_inr)
        found = rep.knee_cycle is not None
        vals += [float(rep.knee_cycle - pre.cycles[0]) if found else float(3 * n), float(found)]
    return np.array(vals, dtype=float)


def full_features(cell: CellRecord, opts: FeatureOptions) -> np.ndarray:
    """Knee cycle and peak |curvature| of the complete trajectory (leaky by design)."""
    tr = cell.trajectory
    rep = detect_knee(tr, opts.knee)
    knee = rep.knee_cycle if rep.knee_cycle is not None else int(tr.cycles[-1])
    return np.array([float(knee - tr.cycles[0]), float(np.max(np.abs(rep.kappa)))])


def _has_stressors(cells: list[CellRecord], opts: FeatureOptions) -> bool:
    if not opts.stressors:
        return False
    for c in cells:
        if not c.rows:
            return False
        if not all(math.isfinite(r.mean_current_a) and math.isfinite(r.mean_temp_c) for r in c.rows):
            return False
    return True


def make_dataset(
    cells,
    target_kind: str = "rul",
    early_window: int = 10,
    full_trajectory: bool = False,
    options: FeatureOptions = FeatureOptions(),
    cache: dict | None = None,
) -> SupervisedDataset:
    """Build one supervised table.

    ``rul``: one row per cell at reference cycle k = last prefix cycle, target
    EOL - k; cells whose EOL precedes k are dropped. ``soh``: one row per
    post-prefix cycle with the cycle offset appended as a coordinate feature.
    ``cache`` (any dict) memoises early-life vectors across calls that share
    cells and options.
    """
    if target_kind not in ("rul", "soh"):
        raise ValueError(f"unknown target kind {target_kind!r}")
    if early_window < 3:
        raise ValueError("early window must be >= 3")
    cells = [as_cell(c) for c in cells]
    stressors = _has_stressors(cells, options)
    names = early_feature_names(early_window, options, stressors)
    if full_trajectory:
        names += ["knee_cycle", "kappa_peak"]
    if target_kind == "soh":
        names += ["cycle_offset"]

    ids, X, y, ks, tags = [], [], [], [], []
    for cell in cells:
        tr = cell.trajectory
        if target_kind == "rul" and tr.eol_cycle is None:
            raise MissingEOL(f"cell {tr.cell_id} has no EOL annotation")
        if len(tr) < early_window:
            log.info("cell %s: shorter than window %d, skipped", tr.cell_id, early_window)
            continue
        k_ref = int(tr.cycles[early_window - 1])
        if target_kind == "rul" and tr.eol_cycle < k_ref:
            log.info("cell %s: EOL %d precedes reference cycle %d, skipped", tr.cell_id, tr.eol_cycle, k_ref)
            continue
        key = (tr.cell_id, early_window, stressors, options)
        if cache is not None and key in cache:
            feats = cache[key]
        else:
            feats = early_features(cell, early_window, options, stressors)
            if cache is not None:
                cache[key] = feats
        if full_trajectory:
            feats = np.concatenate([feats, full_features(cell, options)])
        if target_kind == "rul":
            ids.append(tr.cell_id)
            X.append(feats)
            y.append(float(tr.eol_cycle - k_ref))
            ks.append(k_ref)
            tags.append(tr.dataset_tag)
        else:
            for k, s in zip(tr.cycles[early_window:], tr.soh[early_window:]):
                ids.append(tr.cell_id)
                X.append(np.append(feats, float(k - tr.cycles[0])))
                y.append(float(s))
                ks.append(int(k))
                tags.append(tr.dataset_tag)
    d = len(names)
    return SupervisedDataset(
        np.array(ids, dtype=object),
        np.array(X, dtype=float).reshape(-1, d),
        np.array(y, dtype=float),
        names,
        target_kind,
        early_window,
        "full_trajectory" if full_trajectory else "early_life",
        np.array(ks, dtype=int),
        np.array(tags, dtype=object),
        options,
    )


# ---------------------------------------------------------------------------
# splits and audits


def cell_level_split(dataset: SupervisedDataset, n_folds: int = 5, seed: int = 0) -> np.ndarray:
    """Fold index per row; a shuffled round-robin over distinct cells."""
    cells = list(dict.fromkeys(dataset.cell_ids))
    if n_folds < 2:
        raise ValueError("n_folds must be >= 2")
    if len(cells) < n_folds:
        raise ValueError(f"{len(cells)} cells cannot fill {n_folds} folds")
    order = np.random.default_rng(seed).permutation(len(cells))
    fold_of = {cells[c]: i % n_folds for i, c in enumerate(order)}
    return np.array([fold_of[c] for c in dataset.cell_ids], dtype=int)


def temporal_split(dataset: SupervisedDataset, train_fraction: float = 0.8) -> np.ndarray:
    """Boolean train mask: the earliest ``train_fraction`` of each cell's rows."""
    mask = np.zeros(len(dataset), dtype=bool)
    for c in dict.fromkeys(dataset.cell_ids):
        rows = np.flatnonzero(dataset.cell_ids == c)
        rows = rows[np.argsort(dataset.cycles[rows], kind="stable")]
        mask[rows[: max(1, int(math.floor(train_fraction * len(rows))))]] = True
    return mask


def audit_folds(cell_ids, folds) -> list[str]:
    """Cell ids whose rows appear in more than one fold."""
    seen: dict = {}
    bad = []
    for c, f in zip(cell_ids, folds):
        if seen.setdefault(c, f) != f and c not in bad:
            bad.append(c)
    return bad


def _tampered(cell: CellRecord, n: int, rng: np.random.Generator) -> CellRecord:
    tr = cell.trajectory
    soh = tr.soh.copy()
    soh[n:] = rng.uniform(0.01, 2.0, size=len(soh) - n)
    t2 = CapacityTrajectory(tr.cell_id, tr.q0, tr.cycles.copy(), soh, dataset_tag=tr.dataset_tag)
    rows = None
    if cell.rows is not None:
        last = tr.cycles[n - 1]
        rows = [
            r if r.cycle_index <= last else replace(r, mean_current_a=rng.normal(0, 100), mean_temp_c=rng.normal(0, 100))
            for r in cell.rows
        ]
    return CellRecord(t2, rows)


def audit_leakage(dataset: SupervisedDataset, cells, seed: int = 0) -> list[str]:
    """Violations of the early-life contract (empty list means clean).

    Every early-life row must be reproduced bit-exactly from (a) the cell cut
    to its first N points and (b) the cell with every later point replaced by
    random values.
    """
    if dataset.leakage_class != "early_life":
        return [f"dataset is labelled {dataset.leakage_class}"]
    n = dataset.early_window
    by_id = {c.cell_id: c for c in map(as_cell, cells)}
    stress = "mean_current_a" in dataset.feature_names
    width = len(early_feature_names(n, dataset.options, stress))
    rng = np.random.default_rng(seed)
    out = []
    for cid in dict.fromkeys(dataset.cell_ids):
        cell = by_id[cid]
        stored = dataset.X[np.flatnonzero(dataset.cell_ids == cid)[0], :width]
        tr = cell.trajectory
        last = tr.cycles[n - 1]
        cut = CellRecord(tr.prefix(n), None if cell.rows is None else [r for r in cell.rows if r.cycle_index <= last])
        for label, variant in (("prefix", cut), ("tampered", _tampered(cell, n, rng))):
            again = early_features(variant, n, dataset.options, stress)
            if not np.array_equal(again, stored):
                out.append(f"{cid}: {label} recomputation differs")
    return out
