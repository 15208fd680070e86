from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ouhardy.core import Grid, ProblemConfig
from ouhardy.errors import ConsistencyError, DivergentMomentError, InputError
from ouhardy.measure import (
    WeightedGaussianMeasure,
    appendix_check,
    closed_form_normalization,
    density,
    drift,
    drift_gap,
    equivalence_bounds,
    equivalence_check,
    gamma_moment,
    moment_bounds,
    moment_integral,
    normalization,
    radial_moment_quadrature,
    sample,
    singular_quadrature,
    weighted_integral,
)


@pytest.fixture(scope="module")
def m1(s1):
    return WeightedGaussianMeasure(s1)


# -- density and normalization ------------------------------------------------------------

def test_s1_density_at_origin(m1, frozen):
    assert density(np.zeros(3), m1) == pytest.approx(frozen["s1_density_at_origin"], rel=1e-12)


def test_density_mode_at_barycenter(s1, m1):
    x = np.random.default_rng(0).normal(0, 2, (10_000, 3))
    assert np.all(m1.density(x) <= m1.density(s1.barycenter))


def test_density_pole_swap(m1):
    assert m1.density(np.array([1.0, 0, 0])) == pytest.approx(m1.density(np.array([-1.0, 0, 0])), rel=1e-15)


def test_reduced_form_matches_pairwise_sum(s1, m1):
    x = np.random.default_rng(1).normal(0, 1.5, (50, 3))
    direct = -0.5 * sum(np.sum((x - a) @ s1.a * (x - a), axis=1) for a in s1.poles_array)
    assert np.allclose(m1.log_weight(x), direct, atol=1e-12)


def test_s1_normalization(s1, frozen):
    assert closed_form_normalization(s1) == pytest.approx(frozen["s1_normalization"], rel=1e-14)
    assert normalization(s1) == pytest.approx(math.e * math.pi**-1.5, rel=1e-14)


def test_one_pole_normalizations(frozen):
    std = ProblemConfig.create([[0, 0, 0]], np.eye(3))
    assert normalization(std) == pytest.approx(frozen["standard_normalization"], rel=1e-12)
    scaled = ProblemConfig.create([[0, 0, 0]], 2 * np.eye(3))
    assert normalization(scaled) == pytest.approx(frozen["scaled_normalization"], rel=1e-12)


def test_normalization_quadrature_disagreement_detected(s1):
    coarse = Grid.for_config(s1, 8, 1.2)
    with pytest.raises(ConsistencyError):
        normalization(s1, coarse)


# -- sampling -----------------------------------------------------------------------------

def test_sample_moments(m1):
    x = sample(m1, 100_000, seed=7)
    assert np.all(np.abs(x.mean(axis=0)) <= 3 * math.sqrt(0.5 / 1e5) * math.sqrt(3))
    cov = np.cov(x.T)
    assert np.allclose(cov, 0.5 * np.eye(3), atol=0.02 * 0.5)


def test_sample_deterministic(m1):
    assert np.array_equal(sample(m1, 100, 3), sample(m1, 100, 3))
    assert not np.array_equal(sample(m1, 100, 3), sample(m1, 100, 4))


def test_sample_count(m1):
    with pytest.raises(InputError):
        sample(m1, 0, 0)


# -- weighted integrals --------------------------------------------------------------------

def test_integral_of_one(m1):
    assert weighted_integral(1.0, m1) == pytest.approx(1.0, abs=1e-4)


def test_integral_of_second_moment(m1):
    f = lambda x: np.sum(x**2, axis=-1)
    assert weighted_integral(f, m1) == pytest.approx(1.5, abs=1e-3)
    assert weighted_integral(f, m1, method="montecarlo", samples=200_000, seed=1) == pytest.approx(1.5, abs=2e-2)


def test_inverse_square_integral(s1, m1, frozen):
    vals = [weighted_integral(1.0, m1, Grid.for_config(s1, m), singular_pole=0) for m in (32, 64)]
    assert vals[0] > 0 and abs(vals[1] - vals[0]) < 0.02 * vals[1]
    assert vals[1] == pytest.approx(frozen["s1_inverse_square_expectation"], rel=1e-3)


def test_inverse_square_monte_carlo_agrees(m1, frozen):
    x = sample(m1, 400_000, 11)
    v = 1.0 / np.sum((x - np.array([1.0, 0, 0])) ** 2, axis=1)
    # the estimator has infinite variance in N=3, hence the wide band
    assert v.mean() == pytest.approx(frozen["s1_inverse_square_expectation"], rel=0.05)


def test_non_finite_integrand_rejected(m1):
    with pytest.raises(InputError):
        weighted_integral(lambda x: np.full(x.shape[:-1], np.nan), m1, Grid.for_config(m1.cfg, 16))


# -- singular quadrature ---------------------------------------------------------------------

@pytest.mark.parametrize("beta", ["-0.4", "-1", "-1.3", "0", "1"])
def test_moments_match_series_oracle(s1, m1, frozen, beta):
    val = moment_integral(float(beta), 0, m1).corrected
    assert val == pytest.approx(frozen["s1_moment"][beta], rel=1e-6)


def test_moment_close_to_endpoint(m1, frozen):
    assert moment_integral(-1.499, 0, m1).corrected == pytest.approx(frozen["s1_moment"]["-1.499"], rel=1e-6)


def test_correction_is_needed(s1, m1, frozen):
    res = moment_integral(-1.3, 0, m1, Grid.for_config(s1, 64))
    exact = frozen["s1_moment"]["-1.3"]
    assert abs(res.corrected - exact) < 0.01 * abs(res.raw - exact)


def test_grid_data_path(s1, m1, frozen):
    g = Grid.for_config(s1, 64)
    res = singular_quadrature(m1.weight(g.nodes), g, s1.poles_array[0], -1.0)
    assert res.corrected == pytest.approx(frozen["s1_moment"]["-1"], rel=1e-4)


def test_divergent_moment(m1):
    with pytest.raises(DivergentMomentError):
        moment_integral(-1.5, 0, m1)


# -- drift --------------------------------------------------------------------------------

def test_drift_at_barycenter(s1, m1):
    assert np.allclose(drift(s1.barycenter, m1), 0.0)
    assert drift_gap(s1.barycenter, m1) == 3.0


def test_drift_at_pole(m1):
    x = np.array([1.0, 0, 0])
    assert np.allclose(drift(x, m1), [-2.0, 0, 0])
    assert drift_gap(x, m1) == pytest.approx(2.0, abs=1e-14)


def test_drift_matches_log_density_differences(m1):
    x = np.random.default_rng(2).normal(0, 1.5, (100, 3))
    h = 1e-4
    fd = np.stack([(m1.log_weight(x + h * e) - m1.log_weight(x - h * e)) / (2 * h) for e in np.eye(3)], axis=1)
    assert np.max(np.abs(fd - drift(x, m1))) < 1e-6


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=3, max_size=3))
def test_drift_gap_bound(point):
    cfg = ProblemConfig.create([[1, 0, 0], [-1, 0, 0], [0, 2, 0.5]], np.diag([1.0, 2.0, 0.5]))
    m = WeightedGaussianMeasure(cfg)
    assert drift_gap(np.array(point), m) <= 0.5 * cfg.n * cfg.trace + 1e-10


# -- weight equivalence and appendix estimates --------------------------------------------

def test_equivalence_s1(s1, m1):
    x = np.random.default_rng(4).uniform(-5, 5, (10_000, 3))
    rep = equivalence_check(0, m1, x)
    assert rep.ok and rep.min_margin >= 0


def test_equivalence_at_pole(s1, m1):
    b = equivalence_bounds(s1, 0)
    mid = math.exp(-0.5 * 4.0)
    assert b.c1 <= mid <= b.c2
    assert equivalence_check(0, m1, s1.poles_array[:1]).ok


def test_equivalence_single_pole():
    cfg = ProblemConfig.create([[0, 0, 0]], np.diag([1.0, 2.0, 3.0]))
    b = equivalence_bounds(cfg, 0)
    assert b.c1 == 1.0 and b.c2 == 1.0
    x = np.random.default_rng(5).normal(0, 3, (2000, 3))
    assert equivalence_check(0, WeightedGaussianMeasure(cfg), x).ok


def test_equivalence_bounds_invariants(s1):
    b = equivalence_bounds(s1, 0)
    assert 0 < b.c1 <= 1 <= b.c2
    assert b.alpha1_tilde <= b.alpha2_tilde


def test_appendix_hand_values(s1):
    p = s1.poles_array
    at_pole = appendix_check(0, p, p[:1])
    assert at_pole.lower_margin == pytest.approx((4 + 4) / 4)
    at_origin = appendix_check(0, p, np.zeros((1, 3)))
    assert at_origin.lower_margin == pytest.approx(4.5 / 2)
    assert at_origin.upper_margin == pytest.approx(9.0 / 2)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(2, 5), seed=st.integers(0, 10_000))
def test_appendix_random_pole_sets(n, seed):
    rng = np.random.default_rng(seed)
    poles = rng.uniform(-3, 3, (n, 3))
    x = rng.uniform(-6, 6, (500, 3))
    for i in range(n):
        assert appendix_check(i, poles, x).ok


# -- gamma moment and moment bounds ----------------------------------------------------------

@pytest.mark.parametrize("dim", [3, 4, 5])
@pytest.mark.parametrize("beta", ["0", "0.5", "1", "2"])
def test_gamma_moment_oracle(frozen, beta, dim):
    want = frozen["gamma_moment"][f"{beta}_{dim}"]
    assert gamma_moment(float(beta), dim) == pytest.approx(want, rel=1e-12)
    assert radial_moment_quadrature(float(beta), dim) == pytest.approx(want, rel=1e-6)


def test_gamma_moment_hand_values():
    assert gamma_moment(0, 3) == pytest.approx((2 * math.pi) ** 1.5, rel=1e-12)
    assert gamma_moment(1, 3) == pytest.approx(3 * (2 * math.pi) ** 1.5, rel=1e-12)


def test_gamma_moment_divergent():
    with pytest.raises(DivergentMomentError):
        gamma_moment(-1.5, 3)


def test_moment_bounds_s1(m1):
    rep = moment_bounds(-0.4, 0, m1)
    assert rep.ok and rep.lower <= rep.value <= rep.upper
    assert rep.sigma_n == pytest.approx(4 * math.pi)
