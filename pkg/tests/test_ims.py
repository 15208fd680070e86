from __future__ import annotations

import math

import numpy as np
import pytest

from ouhardy.core import Grid, ProblemConfig, ScalarField
from ouhardy.errors import GeometryError, InputError
from ouhardy.hardy import Bump
from ouhardy.ims import (
    PI2,
    PROPERTY_TOLERANCES,
    build_partition,
    chain_bound,
    fd_gradient_error,
    ims_identity,
    ims_identity_refined,
    lemma3_bound,
    partition_properties,
    q_form,
    regularized_potential,
)


@pytest.fixture(scope="module")
def part(s1):
    return build_partition(s1)


# -- partition ----------------------------------------------------------------------------

@pytest.mark.parametrize("profile", ["cosine", "smooth"])
def test_partition_properties(s1, s1_grid48, profile):
    props = partition_properties(build_partition(s1, profile=profile), s1_grid48)
    for name, tol in PROPERTY_TOLERANCES.items():
        assert props[name] <= tol, name


def test_partition_hand_values(part):
    v = part.evaluate(np.array([[1.0, 0, 0], [0.0, 0, 0], [-1.0, 0.2, 0], [3.0, 0, 0]]))
    assert v.J[0, 0] == 1.0 and v.J[2, 0] == 0.0
    # the origin sits at distance 1 from both poles, outside both supports
    assert v.J[0, 1] == pytest.approx(0.0, abs=1e-15) and v.J[1, 1] == pytest.approx(0.0, abs=1e-15)
    assert v.J[2, 1] == pytest.approx(1.0)
    assert v.J[1, 2] == 1.0
    assert v.J[2, 3] == 1.0


def test_partition_midpoint_of_annulus(part):
    v = part.evaluate(np.array([[1.75, 0.0, 0.0]]))
    assert v.J[0, 0] == pytest.approx(math.cos(math.pi / 4))
    assert v.J[2, 0] ** 2 == pytest.approx(0.5)


def test_fd_gradient_matches_analytic(s1, part):
    g = Grid.for_config(s1, 127)
    err = fd_gradient_error(part, g)
    # central differences of cos(theta) over a unit-half annulus
    assert err <= (math.pi) ** 3 * g.h**2


def test_partition_input_errors(s1):
    with pytest.raises(InputError):
        build_partition(s1, rho=1.0)
    with pytest.raises(InputError):
        build_partition(s1, profile="linear")
    with pytest.raises(GeometryError):
        build_partition(ProblemConfig.create([[0.0, 0, 0]], np.eye(3)))


# -- lemma bound --------------------------------------------------------------------------

def test_annulus_profile_constant(part):
    assert part.f_bound == pytest.approx(PI2)


def test_k_hat_tends_to_pi2(part):
    vals = [lemma3_bound(part, c).value for c in (0.1, 0.01, 0.001)]
    assert vals[-1] == pytest.approx(PI2, rel=1e-2)
    assert all(v >= PI2 - 1e-9 for v in vals)


def test_k_hat_not_below_pi2_for_s1(s1, part):
    k = lemma3_bound(part, s1.coupling, grid=Grid.for_config(s1, 48))
    assert k.value == pytest.approx(PI2, rel=1e-9)
    assert not k.below_pi2


def test_wider_annulus_lowers_k_hat(s1):
    p = build_partition(s1, rho=0.25)
    assert p.f_bound == pytest.approx((math.pi / 1.5) ** 2)
    assert lemma3_bound(p, 1e-6).value == pytest.approx((math.pi / 1.5) ** 2, rel=1e-3)


def test_lemma_coupling_positive(part):
    with pytest.raises(InputError):
        lemma3_bound(part, 0.0)


# -- localization identity -----------------------------------------------------------------

def test_identity_without_potential(s1, part):
    bump = Bump((0.8, 0.2, 0.1), 0.9)
    r = ims_identity_refined(bump, part, Grid.for_config(s1, 48), with_potential=False)
    assert r.ok
    assert r.fine.residual < r.coarse.residual


def test_identity_with_potential_second_order(s1, part):
    r = ims_identity_refined(Bump((-0.7, 0.1, 0.0), 0.8), part, Grid.for_config(s1, 48), check=False)
    # the potential parts cancel node by node, leaving the O(h^2) gradient gap
    assert 2.8 < r.order_ratio < 5.7
    assert r.fine.residual < 0.05 * abs(r.fine.lhs)


def test_identity_plateau_support_exact(s1, part):
    # supported inside the plateau J_1 = 1, so the identity is exact
    g = Grid.for_config(s1, 64)
    bump = Bump((1.0, 0.0, 0.0), 0.08)
    assert bump.support_radius + g.h < part.plateau
    phi = bump.field(g)
    rep = ims_identity(phi, regularized_potential(s1, g), part)
    assert rep.residual <= 1e-12 * abs(rep.lhs)


# -- chain ----------------------------------------------------------------------------------

def test_chain_holds_s1(s1, part):
    g = Grid.for_config(s1, 48)
    rep = chain_bound(Bump((0.6, 0.3, 0.0), 1.2).field(g), s1, part)
    assert not rep.violations
    assert rep.decomposition_residual <= 1e-9 * (abs(rep.q) + rep.mass)
    assert rep.q >= rep.chain_lower
    assert rep.q >= -rep.constants["K_theorem"] * rep.mass


def test_chain_algebraic_display(s1, part):
    g = Grid.for_config(s1, 48)
    rep = chain_bound(Bump((0.0, 0.0, 0.0), 1.5).field(g), s1, part)
    step = next(s for s in rep.steps if s.display.startswith("k + cn"))
    assert step.holds and step.rhs <= 0


def test_far_region_bound(s1, part):
    g = Grid.for_config(s1, 48)
    bump = Bump((0.0, 3.0, 0.0), 0.3)
    assert math.dist(bump.center, s1.poles[0]) - bump.support_radius > s1.r0
    phi = bump.field(g)
    rep = chain_bound(phi, s1, part)
    assert rep.mass_gamma == pytest.approx(rep.mass)
    assert rep.q >= -rep.constants["far_region"] * rep.mass_gamma - 0.5 * s1.trace * rep.mass


def test_q_form_zero_coupling_nonnegative(s1):
    g = Grid.for_config(s1, 32)
    assert q_form(Bump((0.2, 0.0, 0.0), 1.0).field(g), s1.with_coupling(0.0)) > 0


def test_q_form_homogeneous(s1):
    g = Grid.for_config(s1, 32)
    phi = Bump((0.2, 0.0, 0.0), 1.0).field(g)
    assert q_form(ScalarField(g, 3 * phi.values), s1) == pytest.approx(9 * q_form(phi, s1), rel=1e-12)
