from __future__ import annotations

import math

import numpy as np
import pytest

from ouhardy.core import Grid, ProblemConfig, ScalarField
from ouhardy.errors import DegenerateInputError, DomainError, InputError, SingularityError
from ouhardy.hardy import (
    Bump,
    hardy_constants,
    hardy_report,
    improved_report,
    lambda1_estimate,
    moment_ratio_lower_bound,
    optimality_probe,
    potential,
    random_bumps,
    refined_report,
)


def centered_bump(grid, alpha=4.0, cut=2.0):
    r2 = np.sum((grid.nodes - 0.0) ** 2, axis=-1)
    return ScalarField(grid, np.maximum(np.exp(-alpha * r2) - math.exp(-alpha * cut * cut), 0.0))


# -- potential ---------------------------------------------------------------------------

def test_potential_at_origin(s1):
    assert potential(np.zeros(3), s1) == pytest.approx(0.5)


def test_potential_far_region_bound(s1):
    x = np.random.default_rng(0).uniform(-4, 4, (20_000, 3))
    d = np.min(np.linalg.norm(x[:, None] - s1.poles_array[None], axis=-1), axis=1)
    far = x[d >= s1.r0]
    assert np.all(potential(far, s1) <= s1.coupling * s1.n / s1.r0**2 + 1e-12)


def test_potential_linear_in_coupling(s1):
    x = np.random.default_rng(1).normal(size=(100, 3))
    assert np.allclose(potential(x, s1.with_coupling(0.5)), 2 * potential(x, s1))


def test_potential_decreases_along_rays(s1):
    t = np.linspace(1.5, 10, 50)
    v = potential(t[:, None] * np.array([1.0, 0.3, 0.2]), s1)
    assert np.all(np.diff(v) < 0)


def test_potential_singular_at_pole(s1):
    with pytest.raises(SingularityError):
        potential(np.array([1.0, 0, 0]), s1)


# -- constants ---------------------------------------------------------------------------

def test_s1_constants(s1):
    k = hardy_constants(s1)
    assert k.K == pytest.approx(7.75) and k.K_improved == 3.0 and k.c0 == 0.25
    assert k.K >= k.K_improved > 0


# -- hardy_report ------------------------------------------------------------------------

def test_centered_bump_oracle(s1, frozen):
    ref = frozen["s1_centered_bump"]
    coarse, fine = (hardy_report(centered_bump(Grid.for_config(s1, m)), s1) for m in (64, 127))
    assert fine.K == pytest.approx(7.75)
    assert fine.margin >= 0 and coarse.margin >= 0
    # one Richardson step on the h^2 error
    for name in ("lhs", "dirichlet", "mass", "margin"):
        extrapolated = (4 * getattr(fine, name) - getattr(coarse, name)) / 3
        assert extrapolated == pytest.approx(ref[name], rel=1e-3), name


def test_quadratic_homogeneity(s1, s1_grid48):
    phi = Bump((0.3, 0.2, 0.0), 0.5).field(s1_grid48)
    a = hardy_report(phi, s1)
    b = hardy_report(phi * 5.0, s1)
    for name in ("lhs", "dirichlet", "mass", "margin"):
        assert getattr(b, name) == pytest.approx(25 * getattr(a, name), rel=1e-12)


def test_zero_field_rejected(s1, s1_grid48):
    with pytest.raises(DegenerateInputError):
        hardy_report(ScalarField(s1_grid48, np.zeros(s1_grid48.shape)), s1)


def test_boundary_trace_rejected(s1, s1_grid48):
    with pytest.raises(InputError):
        hardy_report(ScalarField(s1_grid48, np.ones(s1_grid48.shape)), s1)


def test_random_bumps_hold(s1, s1_grid64):
    for b in random_bumps(s1, 5, seed=3):
        r = refined_report(b, s1, s1_grid64)
        assert r.holds and r.margin >= 0


def test_margin_converges_second_order(s1):
    b = random_bumps(s1, 1, seed=0)[0]
    ms = [hardy_report(b.field(Grid.for_config(s1, m)), s1).margin for m in (32, 63, 125)]
    ratio = (ms[1] - ms[0]) / (ms[2] - ms[1])
    assert 2.8 < ratio < 5.7


# -- improved constant -------------------------------------------------------------------

def test_improved_s1(s1, s1_grid64):
    rep = improved_report(Bump((0.9, 0.1, 0.0), 0.4).field(s1_grid64), s1)
    assert rep.K == 3.0
    assert rep.margin >= 0


def test_improved_single_pole(one_pole):
    g = Grid.for_config(one_pole, 64)
    r = refined_report(Bump((0.1, 0.0, 0.0), 0.5), one_pole, g, improved=True)
    assert r.coarse.K == 1.5
    assert r.holds


def test_improved_far_support(s1):
    cfg = ProblemConfig.create([[10.0, 0, 0], [-10.0, 0, 0]], np.eye(3))
    g = Grid((0.0, 0.0, 0.0), 14.0, 64)
    phi = Bump((0.0, 0.0, 0.0), 1.0).field(g)
    rep = improved_report(phi, cfg)
    assert rep.lhs <= cfg.c0 / cfg.n * cfg.n / 100 * rep.mass * 1.01
    assert rep.margin > 0


# -- lambda1 ----------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def lam_grid(s1):
    return Grid.for_config(s1, 48)


def test_lambda1_zero_coupling(s1, lam_grid):
    est = lambda1_estimate(s1.with_coupling(0.0), lam_grid)
    assert est.value >= -1e-8
    assert est.residual < 1e-8 and est.positive


def test_lambda1_s1_above_minus_k(s1, lam_grid):
    est = lambda1_estimate(s1, lam_grid)
    assert est.value >= -hardy_constants(s1).K
    assert est.value < 0


def test_lambda1_cutoff_floor(s1, lam_grid):
    est = lambda1_estimate(s1.with_coupling(0.5), lam_grid, k_cut=4)
    assert est.value >= est.bounded_potential_floor(s1.with_coupling(0.5))


def test_lambda1_coarse_grid_warns(s1):
    with pytest.warns(UserWarning, match="r0/8"):
        lambda1_estimate(s1.with_coupling(0.0), Grid.for_config(s1, 16))


# -- optimality probe ------------------------------------------------------------------------

def test_optimality_sign(s1):
    p = optimality_probe(-0.45, 0, s1.with_coupling(0.375))
    assert p.gamma**2 - p.coupling == pytest.approx(-0.1725)
    assert p.r_bound < 0


@pytest.mark.parametrize("gamma", ["-0.3", "-0.4", "-0.49", "-0.499"])
def test_optimality_matches_oracle(s1, frozen, gamma):
    p = optimality_probe(float(gamma), 0, s1.with_coupling(0.375))
    assert p.r_bound == pytest.approx(frozen["s1_r_bound_c0.375"][gamma], rel=1e-5)
    assert p.ratio >= p.ratio_lower_bound
    assert p.closed_form_bound >= p.r_bound


def test_optimality_domain(s1):
    for g in (0.0, -0.5, 0.2):
        with pytest.raises(DomainError):
            optimality_probe(g, 0, s1)


def test_full_potential_quotient_smaller(s1):
    p = optimality_probe(-0.4, 0, s1.with_coupling(0.375), full_potential=True)
    assert p.full_potential_quotient < p.r_bound


def test_moment_ratio_bracket(s1, frozen):
    # (gamma + N/2 - 1) * I(gamma - 1) / I(gamma) stays bounded near the endpoint
    vals = []
    for g, shifted in (("-0.49", "-1.49"), ("-0.499", "-1.499")):
        ratio = frozen["s1_moment"][shifted] / frozen["s1_moment"][g]
        vals.append((float(g) + 0.5) * ratio)
    assert all(0.1 < v < 10 for v in vals)


def test_ratio_lower_bound_positive(s1):
    assert moment_ratio_lower_bound(-0.4, 0, s1) > 0


def test_lambda1_bitwise_repeatable(s1):
    g = Grid.for_config(s1, 24)
    a = lambda1_estimate(s1.with_coupling(0.5), g, k_cut=16)
    b = lambda1_estimate(s1.with_coupling(0.5), g, k_cut=16)
    assert a.value == b.value and a.iterations == b.iterations
