from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ouhardy.core import (
    Grid,
    ProblemConfig,
    ScalarField,
    gradient,
    load_config,
    optimal_constant,
    parse_config,
    tensor_quadrature,
    validate_config,
)
from ouhardy.errors import ConfigError, DefiniteMatrixError, DimensionError, GeometryError, ResolutionError

from conftest import S1_JSON


# -- validate_config ---------------------------------------------------------------

def test_s1_validates(s1):
    rep = validate_config(s1)
    assert rep.ok
    assert rep.r0 == 1.0 and rep.c0 == 0.25 and rep.trace == 3.0
    assert rep.alpha1 == pytest.approx(1.0) and rep.alpha2 == pytest.approx(1.0)


def test_duplicate_poles_geometry_error():
    cfg = ProblemConfig.create([[1, 0, 0], [1, 0, 0]], np.eye(3))
    with pytest.raises(GeometryError):
        validate_config(cfg)


def test_diagonal_four_dimensional():
    cfg = ProblemConfig.create([[0, 0, 0, 0]], np.diag([1.0, 2.0, 3.0, 4.0]))
    rep = validate_config(cfg)
    assert rep.ok
    assert rep.c0 == 1.0 and rep.trace == 10.0
    assert rep.alpha1 == pytest.approx(1.0) and rep.alpha2 == pytest.approx(4.0)


def test_dimension_two_rejected():
    cfg = ProblemConfig.create([[1, 0], [-1, 0]], np.eye(2))
    with pytest.raises(DimensionError, match="dimension"):
        validate_config(cfg)


def test_nonsymmetric_matrix_rejected():
    a = np.eye(3)
    a[0, 1] = 0.5
    with pytest.raises(DefiniteMatrixError):
        validate_config(ProblemConfig.create([[0, 0, 0]], a))


def test_indefinite_matrix_rejected():
    with pytest.raises(DefiniteMatrixError):
        validate_config(ProblemConfig.create([[0, 0, 0]], np.diag([1.0, -1.0, 1.0])))


def test_ims_k_range():
    with pytest.raises(ConfigError, match="ims_k"):
        validate_config(ProblemConfig.create([[0, 0, 0]], np.eye(3), 0.25, ims_k=math.pi**2))


def test_non_strict_report_lists_failures():
    cfg = ProblemConfig.create([[1, 0], [1, 0]], np.eye(2))
    rep = validate_config(cfg, strict=False)
    assert not rep.ok
    assert not rep.checks["dimension"] and not rep.checks["distinct_poles"]


def test_optimal_constant_increasing():
    vals = [optimal_constant(n) for n in range(3, 12)]
    assert vals[0] == 0.25 and vals[1] == 1.0
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_eigenvalue_sandwich():
    rng = np.random.default_rng(3)
    q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    a = q @ np.diag([0.5, 1.0, 2.0, 3.0]) @ q.T
    cfg = ProblemConfig.create([[0, 0, 0, 0]], 0.5 * (a + a.T))
    v = rng.standard_normal((1000, 4))
    quad = np.einsum("pi,ij,pj->p", v, cfg.a, v)
    n2 = np.sum(v * v, axis=1)
    assert np.all(cfg.alpha1 * n2 <= quad + 1e-12)
    assert np.all(quad <= cfg.alpha2 * n2 + 1e-12)


def test_config_hash_tracks_coupling(s1):
    assert s1.config_hash() == s1.with_coupling(0.25).config_hash()
    assert s1.config_hash() != s1.with_coupling(0.5).config_hash()


# -- grid ---------------------------------------------------------------------------

def test_grid_geometry(s1):
    g = Grid.for_config(s1, 33)
    assert g.radius == 4.0
    assert g.h == pytest.approx(0.25)
    assert g.nodes.shape == (33, 33, 33, 3)
    assert g.refine().points == 65 and g.refine().h == pytest.approx(g.h / 2)


def test_grid_needs_points():
    with pytest.raises(ResolutionError):
        Grid((0.0, 0.0, 0.0), 1.0, 2)


def test_grid_must_contain_poles(s1):
    with pytest.raises(GeometryError):
        Grid.for_config(s1, 16, radius=0.5)


# -- gradient -----------------------------------------------------------------------

def _grid(m=17, r=2.0):
    return Grid((0.0, 0.0, 0.0), r, m)


def _inner(a):
    return a[(slice(None),) + (slice(1, -1),) * 3]


def test_gradient_linear_exact():
    g = _grid()
    grad = gradient(ScalarField(g, g.nodes[..., 0])).values
    assert np.allclose(grad[0], 1.0, atol=1e-12)
    assert np.allclose(grad[1:], 0.0, atol=1e-12)


def test_gradient_quadratic_exact_inside():
    g = _grid()
    x = g.nodes
    grad = gradient(ScalarField(g, np.sum(x * x, axis=-1))).values
    exact = np.moveaxis(2 * x, -1, 0)
    assert np.max(np.abs(_inner(grad - exact))) < 1e-12


def test_gradient_sine_taylor_bound():
    g = Grid((0.0, 0.0, 0.0), 4.0, 64)
    grad = gradient(ScalarField(g, np.sin(g.nodes[..., 0]))).values
    inner = (slice(1, -1),) * 3
    err = np.max(np.abs(grad[0][inner] - np.cos(g.nodes[..., 0][inner])))
    assert err <= g.h**2 / 6 + 1e-12


# -- tensor quadrature ------------------------------------------------------------------

def test_quadrature_box_volume():
    assert tensor_quadrature(np.ones((9, 9, 9)), _grid(9, 1.0)) == pytest.approx(8.0, abs=1e-12)


def test_quadrature_gaussian(frozen):
    g = Grid((0.0, 0.0, 0.0), 6.0, 96)
    val = tensor_quadrature(np.exp(-0.5 * np.sum(g.nodes**2, axis=-1)), g)
    assert val == pytest.approx(frozen["gamma_moment"]["0_3"], rel=1e-4)


def test_quadrature_odd_integrand():
    g = _grid(33, 3.0)
    x = g.nodes
    assert abs(tensor_quadrature(x[..., 0] * np.exp(-np.sum(x * x, axis=-1)), g)) < 1e-12


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), perm=st.permutations([0, 1, 2]))
def test_quadrature_linear_and_axis_invariant(a, b, perm):
    g = _grid(9, 1.5)
    x = g.nodes
    f = np.exp(-x[..., 0] ** 2) * (1 + x[..., 1]) ** 2
    h = np.cos(x[..., 2]) + x[..., 0] * x[..., 1]
    lin = tensor_quadrature(a * f + b * h, g)
    assert lin == pytest.approx(a * tensor_quadrature(f, g) + b * tensor_quadrature(h, g), abs=1e-9)
    assert tensor_quadrature(np.transpose(f, perm), g) == pytest.approx(tensor_quadrature(f, g), rel=1e-12)


# -- config files -------------------------------------------------------------------------

def test_load_s1_file(s1):
    run = load_config(S1_JSON)
    assert run.problem == s1
    assert run.grid.points_per_axis == 48 and run.evolve.cutoff_max == 512


def test_unknown_key_rejected_with_path():
    data = json.loads(S1_JSON.read_text())
    data["grid"]["spacing"] = 0.1
    with pytest.raises(ConfigError, match="grid.spacing"):
        parse_config(data)
    data = json.loads(S1_JSON.read_text())
    data["colour"] = 1
    with pytest.raises(ConfigError, match="colour"):
        parse_config(data)


def test_matrix_row_major():
    data = json.loads(S1_JSON.read_text())
    data["matrix_a"] = [2, 1, 0, 1, 3, 0, 0, 0, 4]
    run = parse_config(data)
    assert run.problem.a[0, 1] == 1 and run.problem.a[1, 1] == 3


def test_missing_coupling():
    data = json.loads(S1_JSON.read_text())
    del data["coupling_c"]
    with pytest.raises(ConfigError, match="coupling_c"):
        parse_config(data)
