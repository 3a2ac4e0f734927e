import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kneesight.inr import InrConfig
from kneesight.predict import (
    FeatureOptions,
    ForestConfig,
    MissingEOL,
    ModelSpec,
    audit_folds,
    audit_leakage,
    calibration_report,
    cell_level_split,
    cross_dataset_matrix,
    cross_validate,
    evaluate,
    fit_baseline,
    fit_forest,
    fit_inr_regressor,
    fit_model,
    linear_capacity_validation,
    make_dataset,
    permutation_importance,
    predict_with_variance,
    temporal_split,
)
from kneesight.predict.baselines import RankDeficient
from kneesight.predict.evaluate import UndefinedMetric
from kneesight.predict.forest import tree_predictions
from kneesight.records import CapacityTrajectory
from kneesight.synth import PopulationSpec, gen_population

PLAIN = FeatureOptions(early_knee=False)


@pytest.fixture(scope="module")
def cells():
    pop = PopulationSpec(n_cells=30, length=200, stop_soh=0.8, knee_fade=(0.09, 0.15), seed=3)
    return gen_population(pop)


# ---------------------------------------------------------------------------
# dataset construction


def test_window_excludes_later_cycles(cells):
    ds = make_dataset(cells[:5], early_window=5, options=PLAIN)
    assert ds.feature_names[:5] == [f"soh_{i}" for i in range(1, 6)]
    assert "soh_6" not in ds.feature_names
    np.testing.assert_array_equal(ds.X[0, :5], cells[0].trajectory.soh[:5])
    assert ds.leakage_class == "early_life"


def test_rul_target(cells):
    ds = make_dataset(cells, early_window=10, options=PLAIN)
    for cid, y, k in zip(ds.cell_ids, ds.y, ds.cycles):
        tr = next(c.trajectory for c in cells if c.cell_id == cid)
        assert y == tr.eol_cycle - k and y >= 0 and k == tr.cycles[9]


def test_full_mode_is_labelled(cells):
    ds = make_dataset(cells[:5], early_window=10, full_trajectory=True, options=PLAIN)
    assert ds.leakage_class == "full_trajectory"
    assert "knee_cycle" in ds.feature_names
    assert audit_leakage(ds, cells) == ["dataset is labelled full_trajectory"]


def test_soh_target_rows(cells):
    ds = make_dataset(cells[:3], target_kind="soh", early_window=5, options=PLAIN)
    tr = cells[0].trajectory
    rows = ds.cell_ids == tr.cell_id
    np.testing.assert_array_equal(ds.y[rows], tr.soh[5:])
    assert ds.feature_names[-1] == "cycle_offset"


def test_missing_eol_raises():
    tr = CapacityTrajectory("x", 1.0, np.arange(30), np.linspace(1.0, 0.9, 30))
    with pytest.raises(MissingEOL):
        make_dataset([tr], early_window=5)
    with pytest.raises(ValueError):
        make_dataset([tr], target_kind="cost")


def test_leakage_audit_clean_with_early_knee(cells):
    ds = make_dataset(cells[:4], early_window=10)
    assert "knee_early" in ds.feature_names
    assert audit_leakage(ds, cells[:4]) == []


def test_leakage_audit_catches_tampering(cells):
    ds = make_dataset(cells[:4], early_window=5, options=PLAIN)
    ds.X[1, 2] += 1e-9
    assert len(audit_leakage(ds, cells[:4])) == 2


def test_cache_is_transparent(cells):
    cache = {}
    a = make_dataset(cells[:6], early_window=5, options=PLAIN, cache=cache)
    b = make_dataset(cells[:6], early_window=5, options=PLAIN, cache=cache)
    assert len(cache) == 6
    np.testing.assert_array_equal(a.X, b.X)


# ---------------------------------------------------------------------------
# splits


def test_ten_cells_five_folds(cells):
    ds = make_dataset(cells[:10], target_kind="soh", early_window=5, options=PLAIN)
    folds = cell_level_split(ds, 5, seed=1)
    for f in range(5):
        assert len(set(ds.cell_ids[folds == f])) == 2
    np.testing.assert_array_equal(folds, cell_level_split(ds, 5, seed=1))
    assert audit_folds(ds.cell_ids, folds) == []
    with pytest.raises(ValueError):
        cell_level_split(ds, 11)


def test_audit_folds_detects_split_cell():
    assert audit_folds(["a", "a", "b"], [0, 1, 0]) == ["a"]


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 8), st.integers(0, 10**6), st.lists(st.integers(1, 6), min_size=8, max_size=30))
def test_folds_never_share_cells(n_folds, seed, rows_per_cell):
    from kneesight.predict.dataset import SupervisedDataset

    ids = np.array([f"c{i}" for i, r in enumerate(rows_per_cell) for _ in range(r)], dtype=object)
    n = len(ids)
    ds = SupervisedDataset(ids, np.zeros((n, 1)), np.zeros(n), ["x"], "soh", 5, "early_life",
                           np.arange(n), np.array(["t"] * n, dtype=object))
    assert audit_folds(ids, cell_level_split(ds, n_folds, seed)) == []


def test_temporal_split_keeps_order(cells):
    ds = make_dataset(cells[:3], target_kind="soh", early_window=5, options=PLAIN)
    mask = temporal_split(ds, 0.8)
    for c in set(ds.cell_ids):
        rows = ds.cell_ids == c
        assert ds.cycles[rows & mask].max() < ds.cycles[rows & ~mask].min()


# ---------------------------------------------------------------------------
# baselines


def test_linear_recovers_coefficients(rng):
    X = rng.normal(size=(50, 3))
    y = X @ [1.5, -2.0, 0.25] + 4.0
    m = fit_baseline(X, y)
    np.testing.assert_allclose(m.coef, [1.5, -2.0, 0.25], atol=1e-10)
    assert m.intercept == pytest.approx(4.0, abs=1e-10)


def test_constant_target_intercept_only(rng):
    m = fit_baseline(rng.normal(size=(20, 2)), np.full(20, 3.0))
    np.testing.assert_allclose(m.coef, 0.0, atol=1e-12)
    assert m.intercept == pytest.approx(3.0)


def test_polynomial_exact(rng):
    X = rng.normal(size=(40, 2))
    y = 1 + X[:, 0] ** 2 - 3 * X[:, 0] * X[:, 1]
    m = fit_baseline(X, y, "polynomial", 2)
    np.testing.assert_allclose(m.predict(X), y, atol=1e-9)


def test_collinear_columns_use_jitter_or_raise(rng):
    x = rng.normal(size=30)
    X = np.column_stack([x, 2 * x])
    try:
        m = fit_baseline(X, 3 * x)
    except RankDeficient:
        return
    np.testing.assert_allclose(m.predict(X), 3 * x, atol=1e-6)


def test_linear_capacity_validation_exact_line():
    tr = CapacityTrajectory("a", 2.0, np.arange(40), 1.0 - 0.004 * np.arange(40))
    rows = linear_capacity_validation([tr, tr])
    for h, row in zip((5, 10, 20), rows):
        assert row[:2] == [h, 2]
        assert row[2] == pytest.approx(0.0, abs=1e-9)


def test_linear_capacity_validation_skips_short():
    tr = CapacityTrajectory("a", 1.0, np.arange(8), np.linspace(1, 0.9, 8))
    rows = linear_capacity_validation([tr])
    assert rows[0][1] == 1 and rows[1][1] == 0 and math.isnan(rows[1][2])


# ---------------------------------------------------------------------------
# forest


def test_forest_constant_target(rng):
    m = fit_forest(rng.normal(size=(30, 3)), np.full(30, 2.5), ForestConfig(n_trees=10))
    u = predict_with_variance(m, rng.normal(size=(5, 3)))
    np.testing.assert_array_equal(u.mean, 2.5)
    np.testing.assert_array_equal(u.sigma, 0.0)


def test_single_tree_memorises(rng):
    X = rng.normal(size=(80, 4))
    y = rng.normal(size=80)
    m = fit_forest(X, y, ForestConfig(n_trees=1, bootstrap=False))
    u = predict_with_variance(m, X)
    np.testing.assert_array_equal(u.mean, y)
    np.testing.assert_array_equal(u.sigma, 0.0)


def test_stump_matches_brute_force_split(rng):
    X = rng.normal(size=(40, 3))
    y = np.where(X[:, 1] > 0.3, 5.0, 0.0) + rng.normal(0, 0.5, 40)
    t = fit_forest(X, y, ForestConfig(n_trees=1, bootstrap=False, max_depth=1, features_per_split=3)).trees[0]
    best = (-np.inf, None, None)
    for f in range(3):
        xs = np.unique(X[:, f])
        for thr in 0.5 * (xs[1:] + xs[:-1]):
            left = X[:, f] <= thr
            sse = ((y[left] - y[left].mean()) ** 2).sum() + ((y[~left] - y[~left].mean()) ** 2).sum()
            if -sse > best[0]:
                best = (-sse, f, thr)
    assert t.feature[0] == best[1] and t.threshold[0] == pytest.approx(best[2])


def test_sigma_larger_outside_hull(rng):
    X = rng.uniform(0, 1, size=(200, 2))
    y = np.sin(6 * X[:, 0]) + X[:, 1] + rng.normal(0, 0.1, 200)
    m = fit_forest(X, y, ForestConfig(n_trees=100, seed=1))
    inside = predict_with_variance(m, rng.uniform(0.2, 0.8, size=(100, 2))).sigma
    outside = predict_with_variance(m, rng.uniform(3, 4, size=(100, 2))).sigma
    assert np.median(outside) > np.median(inside)


def test_forest_tree_order_invariance(rng):
    X = rng.normal(size=(50, 3))
    y = X[:, 0] + rng.normal(0, 0.1, 50)
    m = fit_forest(X, y, ForestConfig(n_trees=20))
    a = predict_with_variance(m, X)
    m.trees = m.trees[::-1]
    b = predict_with_variance(m, X)
    np.testing.assert_allclose(a.mean, b.mean, rtol=1e-12)
    np.testing.assert_allclose(a.sigma, b.sigma, rtol=1e-9, atol=1e-12)


def test_forest_determinism_and_errors(rng):
    X = rng.normal(size=(30, 2))
    y = rng.normal(size=30)
    a = tree_predictions(fit_forest(X, y, ForestConfig(n_trees=5, seed=2)), X)
    b = tree_predictions(fit_forest(X, y, ForestConfig(n_trees=5, seed=2)), X)
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        fit_forest(np.zeros((0, 2)), [])
    with pytest.raises(ValueError):
        fit_forest([[np.nan, 1.0]], [1.0])


# ---------------------------------------------------------------------------
# INR regressor and model wrapper


def test_inr_regressor_linear_target(rng):
    X = rng.uniform(-1, 1, size=(300, 2))
    y = 3 * X[:, 0] - X[:, 1] + 10
    reg = fit_inr_regressor(X[:240], y[:240])
    err = reg.predict(X[240:]) - y[240:]
    assert math.sqrt(np.mean(err**2)) < 0.05 * np.ptp(y)


def test_inr_regressor_deterministic(rng):
    X = rng.normal(size=(60, 3))
    y = X.sum(axis=1)
    cfg = InrConfig(variant="mlp_posenc", epochs=20, learning_rate=1e-2, posenc_frequencies=2, seed=4)
    a = fit_inr_regressor(X, y, cfg).predict(X)
    b = fit_inr_regressor(X, y, cfg).predict(X)
    np.testing.assert_array_equal(a, b)


def test_model_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec("svm")
    with pytest.raises(ValueError):
        ModelSpec.from_dict({"kind": "forest", "trees": 3})
    with pytest.raises(ValueError):
        fit_model(ModelSpec("forest", {"n_tree": 3}), np.zeros((5, 1)), np.zeros(5))
    with pytest.raises(ValueError):
        fit_model(ModelSpec("linear"), np.zeros((5, 1)), np.arange(5.0)).predict_uncertain(np.zeros((1, 1)))


# ---------------------------------------------------------------------------
# metrics


def test_evaluate_examples():
    r = evaluate([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert (r.rmse, r.mae, r.r2) == (0.0, 0.0, 1.0)
    r = evaluate([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])
    assert r.r2 == 0.0
    r = evaluate([2.0, 2.0], [1.0, 3.0])
    assert r.rmse == 1.0 and r.mae == 1.0


def test_evaluate_mape_and_errors():
    r = evaluate([1.0, 1.0, 3.0], [0.0, 2.0, 4.0])
    assert r.mape_excluded == 1
    assert r.mape == pytest.approx(100 * (0.5 + 0.25) / 2)
    with pytest.raises(UndefinedMetric):
        evaluate([1.0, 2.0], [3.0, 3.0])
    with pytest.raises(UndefinedMetric):
        evaluate([1.0, 2.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        evaluate([1.0], [1.0])


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 50), st.integers(0, 10**6))
def test_evaluate_properties(n, seed):
    rng = np.random.default_rng(seed)
    t = rng.normal(size=n) + 5
    p = t + rng.normal(size=n)
    r = evaluate(p, t)
    assert r.rmse >= r.mae >= 0 and r.r2 <= 1
    perm = rng.permutation(n)
    assert evaluate(p[perm], t[perm]).rmse == pytest.approx(r.rmse, rel=1e-12)
    assert evaluate(t, t).r2 == 1.0


def test_cross_validate_reports(cells):
    ds = make_dataset(cells, early_window=10, options=PLAIN)
    cv = cross_validate(ds, ModelSpec("forest", {"n_trees": 30}), n_folds=5, seed=0, with_sigma=True)
    assert cv.report.n_folds == 5 and cv.report.n == len(ds)
    assert cv.report.rmse == pytest.approx(np.mean([f.rmse for f in cv.fold_reports]))
    assert cv.report.rmse_std == pytest.approx(np.std([f.rmse for f in cv.fold_reports], ddof=1))
    assert np.all(cv.sigma >= 0)


def test_transfer_matrix_shape():
    cells = []
    for j, shift in enumerate([{}, {"rate": 0.003}, {"noise_sd": 0.002}]):
        cells += gen_population(PopulationSpec(n_cells=15, length=200, stop_soh=0.8, dataset_tag="ABC"[j],
                                               shift=shift, seed=j))
    ds = make_dataset(cells, early_window=5, options=PLAIN)
    tm = cross_dataset_matrix(ds, ModelSpec("forest", {"n_trees": 20}), n_folds=3)
    assert tm.tags == ["A", "B", "C"]
    assert tm.rmse.shape == (3, 3) and np.all(np.isfinite(tm.rmse))
    assert np.all(tm.fold_std[~np.eye(3, dtype=bool)] == 0)
    with pytest.raises(ValueError):
        cross_dataset_matrix(ds.subset(ds.tags == "A"), ModelSpec("linear"))


# ---------------------------------------------------------------------------
# calibration and importance


def test_calibration_proportional():
    e = np.linspace(0.1, 5, 100)
    rep = calibration_report(2 * e, e)
    assert rep.spearman == pytest.approx(1.0)
    assert len(rep.bin_sigma) == 10 and np.all(np.diff(rep.bin_rmse) > 0)


def test_calibration_independent(rng):
    e = np.abs(rng.normal(size=1000))
    rep = calibration_report(rng.permutation(e) + 0.1, e)
    assert abs(rep.pearson) < 0.1 and abs(rep.spearman) < 0.1


def test_calibration_constant_sigma():
    rep = calibration_report(np.ones(20), np.arange(20.0))
    assert rep.pearson is None and rep.spearman is None
    assert len(rep.bin_rmse) == 10


def test_calibrated_half_retention(rng):
    s = rng.uniform(0.1, 2, 2000)
    e = s * rng.normal(size=2000)
    rep = calibration_report(s, e, curve_points=10)
    assert rep.retained_fraction[4] == pytest.approx(0.5)
    assert rep.retained_rmse[4] <= rep.retained_rmse[-1]
    assert rep.retained_rmse[-1] == pytest.approx(math.sqrt(np.mean(e**2)))


def test_calibration_errors():
    with pytest.raises(ValueError):
        calibration_report(np.ones(5), np.ones(5))
    with pytest.raises(ValueError):
        calibration_report(-np.ones(10), np.ones(10))


def test_permutation_importance_single_signal(rng):
    X = rng.normal(size=(300, 3))
    y = 2 * X[:, 1]
    rep = permutation_importance(lambda Z: 2 * Z[:, 1], X, y, ["a", "b", "c"], seed=0)
    assert rep.ranking[0] == "b"
    assert rep.importance[0] == 0.0 and rep.importance[2] == 0.0


def test_importance_capacity_over_stressors(cells):
    ds = make_dataset(cells, early_window=10, options=PLAIN)
    model = fit_model(ModelSpec("forest", {"n_trees": 100}), ds.X, ds.y)
    rep = permutation_importance(model.predict, ds.X, ds.y, ds.feature_names, seed=0)
    imp = dict(zip(rep.names, rep.importance))
    capacity = max(imp[n] for n in ds.feature_names if n.startswith("soh_") or n.startswith("slope"))
    assert capacity > imp["mean_current_a"] and capacity > imp["mean_temp_c"]
