import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kneesight.reliability import (
    DegenerateSample,
    LifetimeFit,
    LifetimeSample,
    fit_lifetime,
    hazard,
    kaplan_meier,
    median_lifetime,
    pdf,
    population_summary,
    reliability_row,
    survival,
)
from kneesight.synth import gen_weibull

# fitted EOL distributions reported for the ISU-ILCC population
PAPER_WEIBULL = LifetimeFit("weibull", 2.353, 16.509, 0.0, 222)
PAPER_LOGNORMAL = LifetimeFit("lognormal", 0.355, 13.645, 0.0, 222)
PAPER_EOL_MEAN = 14.635


def test_km_hand_computed():
    km = kaplan_meier(LifetimeSample.complete([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(km.survival, [2 / 3, 1 / 3, 0.0])
    assert km(0.5) == 1.0 and km(2.0) == pytest.approx(1 / 3)


def test_km_all_censored():
    km = kaplan_meier(LifetimeSample([1.0, 2.0, 5.0], [True, True, True]))
    assert len(km.times) == 0
    assert km(100.0) == 1.0


def test_km_with_censoring():
    # events at 1, 3; censored at 2: S(1) = 3/4, S(3) = 3/4 * (1 - 1/2)
    km = kaplan_meier(LifetimeSample([1.0, 2.0, 3.0, 4.0], [False, True, False, True]))
    np.testing.assert_allclose(km.survival, [0.75, 0.375])
    np.testing.assert_array_equal(km.at_risk, [4, 2])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 30), min_size=1, max_size=100))
def test_km_equals_one_minus_ecdf_with_ties(values):
    x = np.array(values, dtype=float)
    km = kaplan_meier(LifetimeSample.complete(x))
    n = len(x)
    for t, s in zip(km.times, km.survival):
        assert s == (n - np.sum(x <= t)) / n


def test_degenerate_sample():
    with pytest.raises(DegenerateSample):
        fit_lifetime("weibull", LifetimeSample.complete([5.0] * 10))


def test_invalid_samples():
    with pytest.raises(ValueError):
        LifetimeSample.complete([1.0, -2.0])
    with pytest.raises(ValueError):
        fit_lifetime("weibull", LifetimeSample([1.0, 2.0, 3.0], [False, True, False]))
    with pytest.raises(ValueError):
        fit_lifetime("gamma", LifetimeSample.complete([1.0, 2.0, 3.0]))


def test_weibull_recovery():
    fit = fit_lifetime("weibull", gen_weibull(2.353, 16.509, 10_000, seed=0))
    assert fit.shape == pytest.approx(2.353, rel=0.03)
    assert fit.scale == pytest.approx(16.509, rel=0.03)


def test_weibull_mle_is_stationary():
    x = gen_weibull(1.7, 40.0, 500, seed=2).values
    fit = fit_lifetime("weibull", LifetimeSample.complete(x))

    def ll(k, lam):
        return np.sum(np.log(pdf(LifetimeFit("weibull", k, lam, 0, len(x)), x)))

    for dk, dl in [(1e-4, 0), (-1e-4, 0), (0, 1e-3), (0, -1e-3)]:
        assert ll(fit.shape + dk, fit.scale + dl) < fit.loglik
    assert fit.loglik == pytest.approx(ll(fit.shape, fit.scale), rel=1e-12)


def test_lognormal_closed_form():
    rng = np.random.default_rng(1)
    x = np.exp(rng.normal(2.6, 0.355, 5000))
    fit = fit_lifetime("lognormal", LifetimeSample.complete(x))
    assert fit.shape == pytest.approx(np.std(np.log(x)), rel=1e-12)
    assert fit.scale == pytest.approx(math.exp(np.mean(np.log(x))), rel=1e-12)


def test_survival_basics():
    assert survival(PAPER_WEIBULL, 0.0) == 1.0
    assert survival(PAPER_WEIBULL, 16.509) == pytest.approx(math.exp(-1), abs=1e-12)
    assert survival(PAPER_WEIBULL, 14.635) == pytest.approx(0.4709, abs=5e-5)
    with pytest.raises(ValueError):
        survival(PAPER_WEIBULL, -1.0)


def test_paper_weibull_mean_matches_reported_eol_mean():
    mean = PAPER_WEIBULL.scale * math.gamma(1 + 1 / PAPER_WEIBULL.shape)
    assert mean == pytest.approx(PAPER_EOL_MEAN, rel=2e-3)


def test_hazard_exponential_and_increasing():
    expo = LifetimeFit("weibull", 1.0, 10.0, 0.0, 1)
    np.testing.assert_allclose(hazard(expo, np.linspace(0.1, 50, 30)), 0.1, rtol=1e-14)
    h = hazard(PAPER_WEIBULL, np.linspace(0.1, 60, 200))
    assert np.all(np.diff(h) > 0)


@pytest.mark.parametrize("fit", [PAPER_WEIBULL, PAPER_LOGNORMAL])
def test_hazard_times_survival_is_density(fit):
    t = np.random.default_rng(4).uniform(0.5, 40, 50)
    np.testing.assert_allclose(hazard(fit, t) * survival(fit, t), pdf(fit, t), rtol=1e-12, atol=0)


@pytest.mark.parametrize("fit", [PAPER_WEIBULL, PAPER_LOGNORMAL])
def test_cumulative_hazard(fit):
    for t in np.linspace(0.5, 3 * fit.scale, 7):
        H = mpmath.quad(lambda u: hazard(fit, float(u)) if u > 0 else 0.0, [0, t])
        assert float(H) == pytest.approx(-math.log(survival(fit, t)), abs=1e-6)


def test_median():
    assert median_lifetime(LifetimeFit("weibull", 1.0, 10.0, 0, 1)) == pytest.approx(10 * math.log(2))
    assert median_lifetime(PAPER_LOGNORMAL) == 13.645
    for fit in (PAPER_WEIBULL, PAPER_LOGNORMAL):
        assert survival(fit, median_lifetime(fit)) == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("fit", [PAPER_WEIBULL, PAPER_LOGNORMAL])
def test_survival_monotone_bounded(fit):
    s = survival(fit, np.linspace(0, 100, 500))
    assert np.all((s >= 0) & (s <= 1))
    assert np.all(np.diff(s) <= 0)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 1000))
def test_weibull_scale_equivariance(a, seed):
    x = gen_weibull(2.0, 15.0, 200, seed).values
    f1 = fit_lifetime("weibull", LifetimeSample.complete(x))
    f2 = fit_lifetime("weibull", LifetimeSample.complete(a * x))
    assert f2.shape == pytest.approx(f1.shape, rel=1e-6)
    assert f2.scale == pytest.approx(a * f1.scale, rel=1e-6)


def test_true_family_has_higher_likelihood():
    w = gen_weibull(2.353, 16.509, 10_000, seed=5)
    assert fit_lifetime("weibull", w).loglik > fit_lifetime("lognormal", w).loglik
    rng = np.random.default_rng(6)
    ln = LifetimeSample.complete(np.exp(rng.normal(math.log(13.645), 0.355, 10_000)))
    assert fit_lifetime("lognormal", ln).loglik > fit_lifetime("weibull", ln).loglik


def test_weibull_shape_one_for_exponential():
    # exponential sample mean within 2% of the scale at n = 1e5
    x = gen_weibull(1.0, 7.0, 100_000, seed=8).values
    assert np.mean(x) == pytest.approx(7.0, rel=0.02)


def test_reliability_row_layout():
    s = gen_weibull(2.353, 16.509, 1000, seed=1)
    row = reliability_row("d", s)
    n, mean, sd = population_summary(s)
    assert row[:4] == ["d", n, mean, sd]
    assert row[5] == 0.0 and row[8] == 0.0
    assert len(row) == 10
