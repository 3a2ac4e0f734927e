"""Command-line pipeline.

Every subcommand reads its inputs from ``--in`` (defaults to ``--out``) by
fixed file names and writes CSV/JSON artefacts to ``--out``, so a run is a
sequence such as ``synth``, ``features``, ``knee``, ``reliability``,
``stats``, ``predict``, ``report`` over one directory.

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import inr, knee, reliability, stats, synth
from ._io import atomic_write_text, parse_float, parse_opt_int, read_csv_dicts, write_csv
from .features import build_trajectory, extract_cycle_table
from .ingest import ColumnMapping, SegmentationConfig, group_by_cell, load_timeseries, read_cycle_table, write_cycle_table
from .predict import (
    FeatureOptions,
    ModelSpec,
    calibration_report,
    cross_dataset_matrix,
    cross_validate,
    linear_capacity_validation,
    make_dataset,
    permutation_importance,
)
from .predict.baselines import LINEAR_CAPACITY_COLUMNS
from .predict.dataset import CellRecord
from .predict.models import fit_model

log = logging.getLogger("kneesight")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers


def parallel_map(fn, items, jobs: int | None):
    """Order-preserving map; ``jobs`` <= 1 runs in-process."""
    items = list(items)
    jobs = jobs or os.cpu_count() or 1
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as ex:
        return list(ex.map(fn, items))


def _need(path: Path) -> Path:
    if not path.exists():
        raise UsageError(f"missing upstream artifact: {path}")
    return path


def _load_config(path) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {p} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    return doc


def _dataclass_from(cls, doc: dict | None, base=None):
    doc = dict(doc or {})
    names = {f.name for f in fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise UsageError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    for k, v in doc.items():
        if isinstance(v, list):
            doc[k] = tuple(v)
    return replace(base, **doc) if base is not None else cls(**doc)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(type(o).__name__)


def _write_json(path: Path, doc) -> None:
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")


def _load_cells(indir: Path) -> list[CellRecord]:
    rows = read_cycle_table(_need(indir / "cycles.csv"))
    return [CellRecord(build_trajectory(r), r) for r in group_by_cell(rows).values()]


def _knee_config(doc: dict | None) -> knee.KneeConfig:
    doc = dict(doc or {})
    icfg = doc.pop("inr_config", None)
    cfg = _dataclass_from(knee.KneeConfig, doc)
    if icfg is not None:
        cfg = replace(cfg, inr_config=_dataclass_from(inr.InrConfig, icfg, knee.DEFAULT_SMOOTHER_INR))
    return cfg


def _feature_options(cfg: dict) -> FeatureOptions:
    doc = dict(cfg.get("features", {}))
    kcfg = _knee_config(doc.pop("knee", cfg.get("knee")))
    early = doc.pop("early_inr", None)
    opts = _dataclass_from(FeatureOptions, doc, FeatureOptions(knee=kcfg))
    if early is not None:
        opts = replace(opts, early_inr=_dataclass_from(inr.InrConfig, early, knee.DEFAULT_EARLY_INR))
    return opts


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(a, cfg) -> str:
    out = a.out
    pops = cfg.get("populations") or [cfg.get("population", {})]
    cells = []
    for i, doc in enumerate(pops):
        doc = dict(doc)
        doc.setdefault("seed", a.seed + i)
        doc.setdefault("dataset_tag", "synthetic" if len(pops) == 1 else f"synthetic{i}")
        pop = _dataclass_from(synth.PopulationSpec, doc)
        cells += synth.gen_population(pop)
    rows = [r for c in cells for r in c.rows]
    write_cycle_table(rows, out / "cycles.csv")
    write_csv(
        out / "truth.csv",
        ("cell_id", "dataset_tag", "true_knee", "true_eol", "rate", "accel", "noise_sd"),
        (
            [c.cell_id, c.trajectory.dataset_tag, c.trajectory.meta["true_knee"], c.trajectory.meta["true_eol"], c.spec.rate, c.spec.accel, c.spec.noise_sd]
            for c in cells
        ),
    )
    msg = f"synth: {len(cells)} cells, {len(rows)} cycles"
    w = cfg.get("weibull")
    if w:
        sample = synth.gen_weibull(float(w["shape"]), float(w["scale"]), int(w.get("n", 1000)), int(w.get("seed", a.seed)))
        tag = w.get("dataset_tag", "weibull")
        write_csv(out / "lifetimes.csv", ("dataset", "eol", "censored"), ([tag, v, False] for v in sample.values))
        msg += f", {len(sample)} lifetimes"
    return msg


def cmd_ingest(a, cfg) -> str:
    if not a.input:
        raise UsageError("ingest needs --input")
    mapping_doc = cfg.get("mapping")
    if a.mapping:
        mapping = ColumnMapping.from_json(a.mapping)
    elif mapping_doc:
        mapping = ColumnMapping(**mapping_doc)
    else:
        raise UsageError("ingest needs --mapping or a 'mapping' config entry")
    seg = _dataclass_from(SegmentationConfig, cfg.get("segmentation"))
    series = load_timeseries(_need(Path(a.input)), mapping)
    rows = extract_cycle_table(series, seg, rated_q0=cfg.get("rated_q0"))
    write_cycle_table(rows, a.out / "cycles.csv")
    return f"ingest: {len(series)} cells, {len(rows)} discharge cycles"


def cmd_features(a, cfg) -> str:
    cells = _load_cells(a.indir)
    write_csv(
        a.out / "trajectories.csv",
        ("cell_id", "dataset_tag", "cycle_index", "soh", "q_ah"),
        ([c.cell_id, c.trajectory.dataset_tag, int(k), s, q] for c in cells for k, s, q in zip(c.trajectory.cycles, c.trajectory.soh, c.trajectory.capacity)),
    )
    write_csv(
        a.out / "cells.csv",
        ("cell_id", "dataset_tag", "q0", "n_cycles", "last_cycle", "eol_cycle"),
        ([c.cell_id, c.trajectory.dataset_tag, c.trajectory.q0, len(c.trajectory), int(c.trajectory.cycles[-1]), c.trajectory.eol_cycle] for c in cells),
    )
    n_eol = sum(c.trajectory.eol_cycle is not None for c in cells)
    return f"features: {len(cells)} trajectories, {n_eol} reached EOL"


def _knee_job(args):
    traj, kcfg, n_early = args
    if n_early:
        if len(traj) < n_early:
            return None
        return knee.early_life_knee(traj.prefix(n_early), kcfg)
    return knee.detect_knee(traj, kcfg)


def cmd_knee(a, cfg) -> str:
    cells = _load_cells(a.indir)
    kcfg = _knee_config(cfg.get("knee"))
    n_early = a.n_early or cfg.get("n_early")
    reports = parallel_map(_knee_job, [(c.trajectory, kcfg, n_early) for c in cells], a.jobs)
    name = f"knee_early_{n_early}.csv" if n_early else "knee.csv"
    header = knee.KNEE_COLUMNS + (("extrapolated",) if n_early else ())
    rows = []
    for c, r in zip(cells, reports):
        if r is None:
            continue
        rows.append(knee.knee_row(c.cell_id, r) + ([r.extrapolated] if n_early else []))
    write_csv(a.out / name, header, rows)
    if not n_early:
        write_csv(
            a.out / "curvature.csv",
            ("cell_id", "cycle_index", "kappa"),
            ([c.cell_id, int(k), v] for c, r in zip(cells, reports) for k, v in zip(r.cycles, r.kappa)),
        )
    found = sum(r is not None and r.knee_cycle is not None for r in reports)
    return f"knee: {found}/{len(rows)} cells with a knee -> {name}"


def _fit_job(args):
    traj, icfg = args
    model, rep = inr.fit_curve(traj.cycles, traj.soh, icfg)
    return model, rep


def cmd_fit_inr(a, cfg) -> str:
    cells = _load_cells(a.indir)
    base = inr.InrConfig(epochs=inr.CAPACITY_EPOCHS, seed=a.seed)
    icfg = _dataclass_from(inr.InrConfig, cfg.get("inr"), base)
    if a.variant:
        icfg = replace(icfg, variant=a.variant)
    results = parallel_map(_fit_job, [(c.trajectory, icfg) for c in cells], a.jobs)
    mdir = a.out / "models"
    summary, curves = [], []
    for c, (model, rep) in zip(cells, results):
        inr.save_model(model, mdir / f"{c.cell_id}.json")
        fit = inr.forward(model, c.trajectory.cycles.astype(float))[:, 0]
        summary.append([c.cell_id, icfg.variant, rep.train_loss[-1], rep.val_loss[-1] if rep.val_loss else math.nan, rep.final_epoch])
        curves += [[c.cell_id, int(k), s, f] for k, s, f in zip(c.trajectory.cycles, c.trajectory.soh, fit)]
    write_csv(a.out / "inr_fits.csv", ("cell_id", "variant", "train_mse", "val_mse", "epochs"), summary)
    write_csv(a.out / "inr_curves.csv", ("cell_id", "cycle_index", "soh", "fit"), curves)
    val = [s[3] for s in summary if not math.isnan(s[3])]
    return f"fit-inr: {len(summary)} {icfg.variant} models, mean val MSE {np.mean(val) if val else math.nan:.4g}"


def _lifetime_groups(a, cfg) -> dict[str, reliability.LifetimeSample]:
    src = a.lifetimes or cfg.get("lifetimes")
    groups: dict[str, tuple[list, list]] = {}
    if src:
        _, rows = read_csv_dicts(_need(Path(src)))
        for r in rows:
            g = groups.setdefault(r["dataset"], ([], []))
            g[0].append(float(r["eol"]))
            g[1].append(r.get("censored", "0") in ("1", "True", "true"))
    else:
        _, rows = read_csv_dicts(_need(a.indir / "cells.csv"))
        for r in rows:
            g = groups.setdefault(r["dataset_tag"], ([], []))
            eol = parse_opt_int(r["eol_cycle"])
            # cells that never crossed the threshold are right-censored at their last cycle
            g[0].append(float(eol if eol is not None else int(r["last_cycle"])))
            g[1].append(eol is None)
    out = {k: reliability.LifetimeSample(np.array(v), np.array(c)) for k, (v, c) in sorted(groups.items())}
    if len(out) > 1:
        v = np.concatenate([s.values for s in out.values()])
        c = np.concatenate([s.censored for s in out.values()])
        out = {"all": reliability.LifetimeSample(v, c), **out}
    return out


def cmd_reliability(a, cfg) -> str:
    groups = _lifetime_groups(a, cfg)
    family = a.family or cfg.get("family", "weibull")
    rows = []
    for name, sample in groups.items():
        complete = reliability.LifetimeSample.complete(sample.values[~sample.censored])
        rows.append(reliability.reliability_row(name, complete))
    write_csv(a.out / "reliability.csv", reliability.RELIABILITY_COLUMNS, rows)
    pooled = next(iter(groups.values()))
    km = reliability.kaplan_meier(pooled)
    fit = reliability.fit_lifetime(family, reliability.LifetimeSample.complete(pooled.values[~pooled.censored]))
    grid = np.linspace(0.0, float(pooled.values.max()) * 1.2, 121)
    write_csv(
        a.out / f"survival_{family}.csv",
        ("t", "km", "fitted"),
        ([t, km(t), reliability.survival(fit, t)] for t in grid),
    )
    write_csv(a.out / f"hazard_{family}.csv", ("t", "hazard"), ([t, reliability.hazard(fit, t)] for t in grid[1:]))
    write_csv(a.out / "km_steps.csv", ("t", "survival", "at_risk", "events"), zip(km.times, km.survival, km.at_risk, km.events))
    first = rows[0]
    return f"reliability: {len(rows)} groups; {first[0]} weibull k={first[4]:.4g} lambda={first[6]:.4g}"


TABLE3_COLUMNS = (
    "dataset", "N_cells", "EOL_mean", "EOL_std", "knee_mean", "knee_std", "capacity0_mean", "capacity0_std",
    "pearson_eol_knee", "spearman_eol_knee", "pearson_eol_capacity0", "spearman_eol_capacity0",
)
TABLE4_COLUMNS = (
    "scope", "dataset", "pair", "pearson", "pearson_ci_low", "pearson_ci_high",
    "spearman", "spearman_ci_low", "spearman_ci_high", "N",
)


def _safe_corr(x, y, method):
    try:
        return stats.correlation(x, y, method).estimate
    except (ValueError, stats.DegenerateData):
        return math.nan


def _safe_ci(x, y, method, b, seed):
    try:
        r = stats.bootstrap_ci(x, y, method, b, seed=seed)
        return r.estimate, r.ci_low, r.ci_high
    except (ValueError, stats.DegenerateData):
        return math.nan, math.nan, math.nan


def _sd(v):
    return float(np.std(v, ddof=1)) if len(v) > 1 else math.nan


def cmd_stats(a, cfg) -> str:
    _, cells = read_csv_dicts(_need(a.indir / "cells.csv"))
    _, kn = read_csv_dicts(_need(a.indir / "knee.csv"))
    knees = {r["cell_id"]: parse_opt_int(r["knee_cycle"]) for r in kn}
    b = int(cfg.get("bootstrap_b", 2000))
    recs = [
        (r["dataset_tag"], parse_opt_int(r["eol_cycle"]), knees.get(r["cell_id"]), float(r["q0"]))
        for r in cells
    ]
    tags = sorted({t for t, *_ in recs})
    scopes = [("global", "all", recs)] + [("dataset", t, [r for r in recs if r[0] == t]) for t in tags]
    t3, t4 = [], []
    for scope, name, rs in scopes:
        with_eol = [r for r in rs if r[1] is not None]
        ek = [(r[1], r[2]) for r in with_eol if r[2] is not None]
        eq = [(r[1], r[3]) for r in with_eol]
        e = np.array([r[1] for r in with_eol], float)
        kk = np.array([r[2] for r in rs if r[2] is not None], float)
        q = np.array([r[3] for r in rs], float)
        ekx, eky = (np.array(v, float) for v in zip(*ek)) if ek else (np.zeros(0), np.zeros(0))
        eqx, eqy = (np.array(v, float) for v in zip(*eq)) if eq else (np.zeros(0), np.zeros(0))
        if scope == "dataset" or len(tags) == 1:
            t3.append([
                name, len(rs), np.mean(e) if len(e) else math.nan, _sd(e), np.mean(kk) if len(kk) else math.nan, _sd(kk),
                np.mean(q), _sd(q), _safe_corr(ekx, eky, "pearson"), _safe_corr(ekx, eky, "spearman"),
                _safe_corr(eqx, eqy, "pearson"), _safe_corr(eqx, eqy, "spearman"),
            ])
        for pair, (x, y) in (("EOL_vs_knee", (ekx, eky)), ("EOL_vs_capacity0", (eqx, eqy))):
            p = _safe_ci(x, y, "pearson", b, a.seed)
            s = _safe_ci(x, y, "spearman", b, a.seed)
            t4.append([scope, name, pair, *p, *s, len(x)])
    write_csv(a.out / "knee_summary.csv", TABLE3_COLUMNS, t3)
    write_csv(a.out / "correlations.csv", TABLE4_COLUMNS, t4)

    gt, es = [], []
    by_tag = {t: np.array([r[1] for r in recs if r[0] == t and r[1] is not None], float) for t in tags}
    usable = {t: v for t, v in by_tag.items() if len(v) >= 2}
    if len(usable) >= 2:
        for test in ("anova_f", "kruskal_wallis"):
            rep = stats.group_test(list(usable.values()), test)
            gt.append([test, rep.statistic, rep.p_value, ";".join(map(str, rep.sizes))])
        names = list(usable)
        for i in range(len(names)):
            for j in range(i + 1, len(names)):
                d, delta = stats.effect_sizes(usable[names[i]], usable[names[j]])
                es.append([names[i], names[j], d, delta])
    write_csv(a.out / "group_tests.csv", ("test", "statistic", "p_value", "sizes"), gt)
    write_csv(a.out / "effect_sizes.csv", ("group_a", "group_b", "cohens_d", "cliffs_delta"), es)
    glob = t4[0]
    return f"stats: pearson(EOL,knee)={glob[3]:.3f} [{glob[4]:.3f}, {glob[5]:.3f}] n={glob[9]}"


RUL_COLUMNS = ("model", "input_cycles", "rmse", "rmse_std", "mae", "mae_std", "mape", "r2", "r2_std", "n_cells", "n_folds")
DEFAULT_MODELS = ("linear", "forest", "inr")


def _model_specs(cfg) -> list[ModelSpec]:
    docs = cfg.get("models") or [{"kind": k} for k in DEFAULT_MODELS]
    return [ModelSpec.from_dict(d) for d in docs]


def _report_row(name, n, rep, n_cells):
    return [name, n, rep.rmse, rep.rmse_std, rep.mae, rep.mae_std, rep.mape, rep.r2, rep.r2_std, n_cells, rep.n_folds]


def cmd_predict(a, cfg) -> str:
    cells = _load_cells(a.indir)
    opts = _feature_options(cfg)
    windows = [a.n_early] if a.n_early else list(cfg.get("windows", (5, 10, 20)))
    folds = int(cfg.get("folds", 5))
    specs = _model_specs(cfg)
    eligible = [c for c in cells if c.trajectory.eol_cycle is not None]
    if len(eligible) < len(cells):
        log.info("predict: %d cells without EOL left out", len(cells) - len(eligible))
    cache: dict = {}
    rows, calib, ablation = [], [], []
    for n in windows:
        ds = make_dataset(eligible, "rul", n, options=opts, cache=cache)
        for spec in specs:
            cv = cross_validate(ds, spec, folds, a.seed, with_sigma=spec.kind in ("forest", "inr"))
            rows.append(_report_row(spec.kind, n, cv.report, len(ds)))
            if cv.sigma is not None:
                cr = calibration_report(cv.sigma, np.abs(cv.predictions - ds.y), curve_points=10)
                calib += [[spec.kind, n, "curve", f, r] for f, r in zip(cr.retained_fraction, cr.retained_rmse)]
                calib += [[spec.kind, n, "bin", s, r] for s, r in zip(cr.bin_sigma, cr.bin_rmse)]
    write_csv(a.out / "rul_results.csv", RUL_COLUMNS, rows)
    write_csv(a.out / "calibration.csv", ("model", "input_cycles", "kind", "x", "rmse"), calib)

    n_abl = max(windows)
    forest = ModelSpec("forest", dict(cfg.get("forest", {})))
    for full in (False, True):
        ds = make_dataset(eligible, "rul", n_abl, full_trajectory=full, options=opts, cache=cache)
        rep = cross_validate(ds, forest, folds, a.seed).report
        ablation.append([ds.leakage_class, n_abl, rep.rmse, rep.mae, rep.r2])
    write_csv(a.out / "ablation.csv", ("feature_set", "input_cycles", "rmse", "mae", "r2"), ablation)

    ds = make_dataset(eligible, "rul", n_abl, options=opts, cache=cache)
    model = fit_model(forest.with_seed(a.seed), ds.X, ds.y)
    imp = permutation_importance(model.predict, ds.X, ds.y, ds.feature_names, a.seed)
    write_csv(a.out / "importance.csv", ("feature", "importance"), ([imp.names[j], imp.importance[j]] for j in np.argsort(-imp.importance, kind="stable")))
    write_csv(a.out / "linear_capacity.csv", LINEAR_CAPACITY_COLUMNS, linear_capacity_validation([c.trajectory for c in cells]))
    best = min(rows, key=lambda r: r[2])
    return f"predict: {len(rows)} model/window runs; best {best[0]} N={best[1]} RMSE={best[2]:.3f}"


def cmd_xeval(a, cfg) -> str:
    cells = _load_cells(a.indir)
    eligible = [c for c in cells if c.trajectory.eol_cycle is not None]
    n = a.n_early or int(cfg.get("window", 10))
    ds = make_dataset(eligible, "rul", n, options=_feature_options(cfg))
    spec = ModelSpec.from_dict(cfg.get("model", {"kind": "forest"}))
    m = cross_dataset_matrix(ds, spec, int(cfg.get("folds", 5)), a.seed)
    write_csv(a.out / "transfer_matrix.csv", ("train", *m.tags), ([t, *row] for t, row in zip(m.tags, m.rmse)))
    off = m.rmse[~np.eye(len(m.tags), dtype=bool)].mean()
    return f"xeval: {len(m.tags)} tags, mean diagonal {np.diag(m.rmse).mean():.3f}, mean off-diagonal {off:.3f}"


def cmd_cluster(a, cfg) -> str:
    cells = _load_cells(a.indir)
    k = int(cfg.get("k", 4))
    X = stats.trajectory_matrix([c.trajectory for c in cells], int(cfg.get("points", 50)))
    emb = stats.embed(X, int(cfg.get("components", 2)), k, a.seed)
    write_csv(
        a.out / "pca.csv",
        ("cell_id", "dataset_tag", *(f"pc{i + 1}" for i in range(emb.scores.shape[1])), "cluster"),
        ([c.cell_id, c.trajectory.dataset_tag, *s, int(l)] for c, s, l in zip(cells, emb.scores, emb.labels)),
    )
    grid_rows = []
    for j in range(k):
        members = X[emb.labels == j]
        if len(members) == 0:
            continue
        mu = members.mean(axis=0)
        half = 1.96 * members.std(axis=0, ddof=1) / math.sqrt(len(members)) if len(members) > 1 else np.zeros_like(mu)
        grid_rows += [[j, i, m, h] for i, (m, h) in enumerate(zip(mu, half))]
    write_csv(a.out / "cluster_means.csv", ("cluster", "point", "soh", "band"), grid_rows)
    ratio = ", ".join(f"{r:.3f}" for r in emb.explained_variance_ratio)
    return f"cluster: {len(cells)} trajectories, k={k}, explained variance [{ratio}]"


def _copy_table(src: Path, dst: Path) -> bool:
    if not src.exists():
        return False
    atomic_write_text(dst, src.read_text(encoding="utf-8"))
    return True


REPORT_TABLES = {
    "table2_rul.csv": "rul_results.csv",
    "table3_knee_summary.csv": "knee_summary.csv",
    "table4_correlations.csv": "correlations.csv",
    "table6_transfer.csv": "transfer_matrix.csv",
    "table7_ablation.csv": "ablation.csv",
    "tableA1_linear_capacity.csv": "linear_capacity.csv",
}


def cmd_report(a, cfg) -> str:
    src = a.indir
    dst = a.out / "report"
    made = [name for name, f in REPORT_TABLES.items() if _copy_table(src / f, dst / name)]
    if not made:
        raise UsageError(f"no upstream tables found in {src}")
    rel = src / "reliability.csv"
    if rel.exists():
        header, rows = read_csv_dicts(rel)
        glob = [r for r in rows if r["dataset"] == "all"] or rows[:1]
        write_csv(dst / "tableA2_reliability_global.csv", header[1:], ([r[c] for c in header[1:]] for r in glob))
        per = [r for r in rows if r["dataset"] != "all"]
        write_csv(dst / "tableA3_reliability_by_dataset.csv", header, ([r[c] for c in header] for r in per))
        made += ["tableA2_reliability_global.csv", "tableA3_reliability_by_dataset.csv"]
    cells_path = src / "cells.csv"
    if cells_path.exists():
        _, cells = read_csv_dicts(cells_path)
        eol = np.array([int(r["eol_cycle"]) for r in cells if r["eol_cycle"] != ""], float)
        if len(eol):
            counts, edges = np.histogram(eol, bins=int(cfg.get("bins", 20)))
            write_csv(dst / "plot_eol_hist.csv", ("x", "y"), zip(0.5 * (edges[1:] + edges[:-1]), counts))
            made.append("plot_eol_hist.csv")
    for fam in ("weibull", "lognormal"):
        p = src / f"survival_{fam}.csv"
        if p.exists():
            _, rows = read_csv_dicts(p)
            write_csv(dst / f"plot_survival_{fam}.csv", ("x", "y", "band"), ([r["t"], parse_float(r["fitted"]), parse_float(r["km"])] for r in rows))
            made.append(f"plot_survival_{fam}.csv")
    tm = src / "transfer_matrix.csv"
    if tm.exists():
        header, rows = read_csv_dicts(tm)
        write_csv(dst / "plot_transfer_heatmap.csv", ("x", "y", "value"), ([c, r["train"], parse_float(r[c])] for r in rows for c in header[1:]))
        made.append("plot_transfer_heatmap.csv")
    _write_json(dst / "manifest.json", {"files": sorted(made)})
    return f"report: {len(made)} files in {dst}"


COMMANDS = {
    "ingest": cmd_ingest,
    "features": cmd_features,
    "fit-inr": cmd_fit_inr,
    "knee": cmd_knee,
    "reliability": cmd_reliability,
    "stats": cmd_stats,
    "predict": cmd_predict,
    "xeval": cmd_xeval,
    "cluster": cmd_cluster,
    "synth": cmd_synth,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file; flags override its values")
    common.add_argument("--seed", type=int, help="global seed (default 0)")
    common.add_argument("--out", help="output directory (default .)")
    common.add_argument("--in", dest="indir", help="input directory (default: --out)")
    common.add_argument("--jobs", type=int, help="worker processes for per-cell stages (default: logical cores)")

    p = _Parser(prog="kneesight", description="Battery ageing trajectory toolkit.")
    sub = p.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}", parser_class=_Parser)
    sub.required = True
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "ingest":
            sp.add_argument("--input", help="raw time-series CSV")
            sp.add_argument("--mapping", help="column-mapping JSON")
        if name in ("knee", "predict", "xeval"):
            sp.add_argument("--n-early", type=int, choices=(5, 10, 20))
        if name == "fit-inr":
            sp.add_argument("--variant", choices=inr.VARIANTS)
        if name == "reliability":
            sp.add_argument("--family", choices=("weibull", "lognormal"))
            sp.add_argument("--lifetimes", help="CSV with dataset,eol[,censored] columns")
    return p


def _setup_logging() -> None:
    level = os.environ.get("KNEESIGHT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def run(argv=None) -> int:
    _setup_logging()
    try:
        a = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _load_config(a.config)
        a.seed = a.seed if a.seed is not None else int(cfg.get("seed", 0))
        a.jobs = a.jobs if a.jobs is not None else cfg.get("jobs")
        a.out = Path(a.out or cfg.get("out", "."))
        a.indir = Path(a.indir or cfg.get("in", a.out))
        for flag in ("n_early", "variant", "family", "lifetimes", "input", "mapping"):
            if hasattr(a, flag) and getattr(a, flag) is None and flag in cfg:
                setattr(a, flag, cfg[flag])
        a.out.mkdir(parents=True, exist_ok=True)
        print(COMMANDS[a.command](a, cfg))
        return 0
    except (inr.TrainingDiverged, reliability.ConvergenceError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"kneesight {a.command}: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (UsageError, ValueError, KeyError, OSError, TypeError) as exc:
        print(f"kneesight {a.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
