"""Gaussian invariant measure, singular quadrature, and the weight estimates."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from .core import Grid, ProblemConfig, ScalarField, tensor_quadrature
from .errors import (
    ConsistencyError,
    DefiniteMatrixError,
    DivergentMomentError,
    InequalityViolationError,
    InputError,
)

NORMALIZATION_RTOL = 1e-4
VIOLATION_TOL = 1e-12
# Gaussian damping width of the subtraction model, as a fraction of the
# distance from the pole to the nearest box face.
SIGMA_FRACTION = 1 / 7.5


def sphere_area(dim: int) -> float:
    """Surface area of the unit sphere in R^dim."""
    return 2 * math.pi ** (dim / 2) / math.gamma(dim / 2)


def gamma_moment(beta: float, dim: int) -> float:
    """Closed form of the radial moment  int |x|^(2 beta) exp(-|x|^2/2) dx  over R^dim."""
    s = beta + dim / 2
    if s <= 0:
        raise DivergentMomentError(f"moment diverges for beta={beta} <= -N/2")
    return sphere_area(dim) * 2 ** (s - 1) * math.gamma(s)


class WeightedGaussianMeasure:
    """Probability density proportional to exp(-1/2 sum_i <A(x-a_i), x-a_i>)."""

    def __init__(self, cfg: ProblemConfig):
        self.cfg = cfg
        self.barycenter = cfg.barycenter
        self.precision = cfg.n * cfg.a
        p = cfg.poles_array
        a = cfg.a
        aa = np.einsum("ij,jk,ik->", p, a, p)
        self.offset = float(aa - cfg.n * self.barycenter @ a @ self.barycenter)

    @cached_property
    def normalization(self) -> float:
        return closed_form_normalization(self.cfg)

    def log_weight(self, x: np.ndarray) -> np.ndarray:
        """Log of the unnormalized weight, vectorized over the trailing axis."""
        y = np.asarray(x, dtype=float) - self.barycenter
        q = np.einsum("...i,ij,...j->...", y, self.precision, y)
        return -0.5 * (q + self.offset)

    def weight(self, x: np.ndarray) -> np.ndarray:
        return np.exp(self.log_weight(x))

    def density(self, x: np.ndarray) -> np.ndarray:
        return self.normalization * self.weight(x)

    def weight_taylor(self, point: np.ndarray):
        """Value, gradient and Hessian of the unnormalized weight at ``point``."""
        w = float(self.weight(point))
        s = -self.precision @ (np.asarray(point, dtype=float) - self.barycenter)
        return w, w * s, w * (np.outer(s, s) - self.precision)

    @cached_property
    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.precision)

    def nodal_density(self, grid: Grid) -> np.ndarray:
        return self.density(grid.nodes)


def closed_form_normalization(cfg: ProblemConfig) -> float:
    p = cfg.poles_array
    bar = cfg.barycenter
    a = cfg.a
    offset = float(np.einsum("ij,jk,ik->", p, a, p) - cfg.n * bar @ a @ bar)
    det = float(np.linalg.det(a))
    return math.exp(offset / 2) * (cfg.n / (2 * math.pi)) ** (cfg.dimension / 2) * math.sqrt(det)


def density(x, m: WeightedGaussianMeasure):
    return m.density(x)


def normalization(cfg: ProblemConfig, grid: Grid | None = None, check: bool = True) -> float:
    """Closed-form normalization, optionally cross-checked by tensor quadrature."""
    c = closed_form_normalization(cfg)
    if check:
        if grid is None:
            grid = Grid.for_config(cfg, 96, 6.0)
        total = tensor_quadrature(WeightedGaussianMeasure(cfg).weight(grid.nodes), grid)
        c_quad = 1.0 / total
        if abs(c_quad - c) > NORMALIZATION_RTOL * c:
            raise ConsistencyError(
                f"closed-form normalization {c:.8g} disagrees with quadrature {c_quad:.8g}"
            )
    return c


def sample(m: WeightedGaussianMeasure, count: int, seed: int) -> np.ndarray:
    """I.i.d. draws from N(barycenter, (nA)^-1), shape (count, N)."""
    if count < 1:
        raise InputError("count must be >= 1")
    try:
        chol = np.linalg.cholesky(m.precision)
    except np.linalg.LinAlgError:
        raise DefiniteMatrixError("Cholesky factorization of nA failed", "matrix_a") from None
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((count, m.cfg.dimension))
    # x = mean + L^{-T} z has covariance (L L^T)^{-1}
    y = np.linalg.solve(chol.T, z.T).T
    return m.barycenter + y


# -- singular quadrature ------------------------------------------------------

@dataclass(frozen=True)
class Taylor:
    """Second-order Taylor data of a smooth factor at a point."""

    value: float
    grad: np.ndarray
    hess: np.ndarray


@dataclass(frozen=True)
class SingularIntegral:
    raw: float
    corrected: float
    sigma: float

    @property
    def correction(self) -> float:
        return self.corrected - self.raw


def _distance_to_face(grid: Grid, pole: np.ndarray) -> float:
    return float(grid.radius - np.max(np.abs(pole - np.asarray(grid.center))))


def taylor_from_callable(fn: Callable[[np.ndarray], np.ndarray], point: np.ndarray, delta: float = 1e-3) -> Taylor:
    """Central finite differences for the gradient and Hessian."""
    point = np.asarray(point, dtype=float)
    dim = point.size
    eye = np.eye(dim) * delta
    f0 = float(fn(point))
    grad = np.empty(dim)
    hess = np.empty((dim, dim))
    for k in range(dim):
        fp = float(fn(point + eye[k]))
        fm = float(fn(point - eye[k]))
        grad[k] = (fp - fm) / (2 * delta)
        hess[k, k] = (fp - 2 * f0 + fm) / delta**2
        for l in range(k):
            fpp = float(fn(point + eye[k] + eye[l]))
            fpm = float(fn(point + eye[k] - eye[l]))
            fmp = float(fn(point - eye[k] + eye[l]))
            fmm = float(fn(point - eye[k] - eye[l]))
            hess[k, l] = hess[l, k] = (fpp - fpm - fmp + fmm) / (4 * delta**2)
    return Taylor(f0, grad, hess)


def taylor_from_grid(values: np.ndarray, grid: Grid, point: np.ndarray, degree: int = 3) -> Taylor:
    """Polynomial least-squares fit on the 4^N nodes surrounding ``point``.

    A cubic fit keeps the value, gradient and Hessian errors at O(h^4), O(h^3)
    and O(h^2) respectively.
    """
    point = np.asarray(point, dtype=float)
    dim = grid.dim
    h = grid.h
    base = np.floor((point - np.asarray(grid.center) + grid.radius) / h).astype(int) - 1
    base = np.clip(base, 0, grid.points - 4)
    idx = [np.arange(b, b + 4) for b in base]
    sub = values[np.ix_(*idx)].ravel()
    axes = [grid.axis(k)[idx[k]] for k in range(dim)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    y = (pts - point) / h
    powers = [e for e in itertools.product(range(degree + 1), repeat=dim) if sum(e) <= degree]
    design = np.column_stack([np.prod(y**np.array(e), axis=1) for e in powers])
    coef, *_ = np.linalg.lstsq(design, sub, rcond=None)
    lookup = dict(zip(powers, coef))
    unit = np.eye(dim, dtype=int)
    grad = np.array([lookup[tuple(unit[k])] for k in range(dim)]) / h
    hess = np.empty((dim, dim))
    for k in range(dim):
        hess[k, k] = 2 * lookup[tuple(2 * unit[k])] / h**2
        for l in range(k):
            hess[k, l] = hess[l, k] = lookup[tuple(unit[k] + unit[l])] / h**2
    return Taylor(float(lookup[(0,) * dim]), grad, hess)


def singular_quadrature(
    smooth,
    grid: Grid,
    pole,
    beta: float,
    taylor: Taylor | None = None,
    sigma: float | None = None,
) -> SingularIntegral:
    """Integrate ``smooth(x) * |x - pole|^(2 beta)`` over the grid box.

    A Gaussian-damped quadratic model of the smooth factor times the singular
    kernel is subtracted node-wise and its exact integral over R^N added back.
    ``raw`` is the plain trapezoid sum with any node sitting on the pole dropped.
    """
    pole = np.asarray(pole, dtype=float)
    dim = grid.dim
    if beta + dim / 2 <= 0:
        raise DivergentMomentError(f"integrand is not integrable for beta={beta}")
    nodes = grid.nodes
    values = smooth(nodes) if callable(smooth) else np.asarray(smooth, dtype=float)
    if values.shape != grid.shape:
        raise InputError(f"smooth factor shape {values.shape} does not match grid")

    y = nodes - pole
    r2 = np.einsum("...i,...i->...", y, y)
    on_pole = r2 < (1e-12 * grid.h) ** 2
    bad = ~np.isfinite(values) & ~on_pole
    if bad.any():
        raise InputError("non-finite integrand at a node away from the poles")
    fit_values = values
    values = np.where(on_pole, 0.0, values)
    with np.errstate(divide="ignore"):
        kernel = np.where(on_pole, 0.0, np.power(np.where(on_pole, 1.0, r2), beta))
    raw = tensor_quadrature(values * kernel, grid)

    if sigma is None:
        sigma = SIGMA_FRACTION * _distance_to_face(grid, pole)
    if sigma <= 0:
        raise InputError("pole must lie strictly inside the grid box")
    if taylor is None:
        if callable(smooth):
            taylor = taylor_from_callable(smooth, pole)
        else:
            taylor = taylor_from_grid(fit_values, grid, pole)

    # model = G(x) * q-Taylor(x), where q = g / G and G = exp(-r^2 / (2 sigma^2))
    q0 = taylor.value
    qgrad = taylor.grad
    qhess = taylor.hess + taylor.value * np.eye(dim) / sigma**2
    damp = np.exp(-r2 / (2 * sigma**2))
    poly = q0 + y @ qgrad + 0.5 * np.einsum("...i,ij,...j->...", y, qhess, y)
    model = np.where(on_pole, 0.0, damp * poly * kernel)
    resid = tensor_quadrature(values * kernel - model, grid)

    def moment(b: float) -> float:
        return sigma ** (2 * b + dim) * gamma_moment(b, dim)

    exact = q0 * moment(beta) + 0.5 * np.trace(qhess) / dim * moment(beta + 1)
    return SingularIntegral(raw=raw, corrected=float(resid + exact), sigma=float(sigma))


def weighted_integral(
    f,
    m: WeightedGaussianMeasure,
    grid: Grid | None = None,
    method: str = "quadrature",
    singular_pole: int | None = None,
    beta: float = -1.0,
    samples: int = 100_000,
    seed: int = 0,
) -> float:
    """Integral of ``f`` against the normalized measure.

    With ``singular_pole`` set the integrand is ``f(x) * |x - a_i|^(2 beta)`` and
    the quadrature path uses :func:`singular_quadrature`.
    """
    cfg = m.cfg
    if method == "montecarlo":
        x = sample(m, samples, seed)
        vals = f(x) if callable(f) else np.full(len(x), float(f))
        if singular_pole is not None:
            d2 = np.sum((x - cfg.poles_array[singular_pole]) ** 2, axis=1)
            vals = vals * d2**beta
        return float(np.mean(vals))
    if method != "quadrature":
        raise InputError(f"unknown integration method {method!r}")
    if grid is None:
        grid = Grid.for_config(cfg, 64)
    if isinstance(f, ScalarField):
        fv = f.values
    elif callable(f):
        fv = np.asarray(f(grid.nodes), dtype=float)
    else:
        fv = np.full(grid.shape, float(f))
    if singular_pole is None:
        if not np.all(np.isfinite(fv)):
            raise InputError("non-finite integrand at a node")
        return tensor_quadrature(fv * m.density(grid.nodes), grid)

    pole = cfg.poles_array[singular_pole]
    g = fv * m.density(grid.nodes)
    taylor = None
    if callable(f) and not isinstance(f, ScalarField):
        taylor = taylor_from_callable(lambda x: f(x) * m.density(x), pole)
    return singular_quadrature(g, grid, pole, beta, taylor=taylor).corrected


# -- drift --------------------------------------------------------------------

def drift(x, m: WeightedGaussianMeasure) -> np.ndarray:
    """grad(mu)/mu = -sum_j A(x - a_j), vectorized over leading axes."""
    cfg = m.cfg
    y = np.asarray(x, dtype=float) - cfg.barycenter
    return -cfg.n * y @ cfg.a.T


def drift_gap(x, m: WeightedGaussianMeasure) -> np.ndarray:
    d = drift(x, m)
    return 0.5 * m.cfg.n * m.cfg.trace - 0.25 * np.sum(d * d, axis=-1)


# -- weight equivalence and appendix estimates ----------------------------------

@dataclass(frozen=True)
class EquivalenceBounds:
    pole: int
    alpha1: float
    alpha2: float
    alpha1_tilde: float
    alpha2_tilde: float
    c1: float
    c2: float
    pair_sum: float


def pair_sum(cfg: ProblemConfig, i: int) -> float:
    p = cfg.poles_array
    return float(np.sum((p - p[i]) ** 2))


def equivalence_bounds(cfg: ProblemConfig, i: int) -> EquivalenceBounds:
    s = pair_sum(cfg, i)
    a1, a2, n = cfg.alpha1, cfg.alpha2, cfg.n
    return EquivalenceBounds(
        pole=i,
        alpha1=a1,
        alpha2=a2,
        alpha1_tilde=a1 * (n + 1) / 2,
        alpha2_tilde=a2 * (2 * n - 1),
        c1=math.exp(-a2 * s),
        c2=math.exp(0.5 * a1 * s),
        pair_sum=s,
    )


@dataclass
class CheckReport:
    name: str
    points: int
    min_margin: float
    lower_margin: float
    upper_margin: float

    @property
    def ok(self) -> bool:
        return self.min_margin >= -VIOLATION_TOL


def equivalence_check(i: int, m: WeightedGaussianMeasure, x: np.ndarray, raise_on_fail: bool = True) -> CheckReport:
    """Two-sided Gaussian sandwich around pole ``i``, compared in log space."""
    cfg = m.cfg
    b = equivalence_bounds(cfg, i)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r2 = np.sum((x - cfg.poles_array[i]) ** 2, axis=1)
    diffs = x[:, None, :] - cfg.poles_array[None, :, :]
    middle = -0.5 * np.einsum("pjk,kl,pjl->p", diffs, cfg.a, diffs)
    lower = -b.alpha2 * b.pair_sum - 0.5 * b.alpha2_tilde * r2
    upper = 0.5 * b.alpha1 * b.pair_sum - 0.5 * b.alpha1_tilde * r2
    scale = np.maximum(1.0, np.abs(middle))
    lo = float(np.min((middle - lower) / scale))
    up = float(np.min((upper - middle) / scale))
    rep = CheckReport("equivalence", len(x), min(lo, up), lo, up)
    if raise_on_fail and not rep.ok:
        raise InequalityViolationError(f"weight equivalence violated at pole {i}: margin {rep.min_margin:.3e}")
    return rep


def appendix_check(i: int, poles: np.ndarray, x: np.ndarray, raise_on_fail: bool = True) -> CheckReport:
    """Distance-sum sandwich around pole ``i`` for an arbitrary pole set."""
    poles = np.atleast_2d(np.asarray(poles, dtype=float))
    n = len(poles)
    if n < 2:
        raise InputError("appendix estimates need at least two poles")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    s = float(np.sum((poles - poles[i]) ** 2))
    r2 = np.sum((x - poles[i]) ** 2, axis=1)
    total = np.sum((x[:, None, :] - poles[None, :, :]) ** 2, axis=(1, 2))
    lower = -s + 0.5 * (n + 1) * r2
    upper = (2 * n - 1) * r2 + 2 * s
    scale = np.maximum(1.0, total)
    lo = float(np.min((total - lower) / scale))
    up = float(np.min((upper - total) / scale))
    rep = CheckReport("appendix", len(x), min(lo, up), lo, up)
    if raise_on_fail and not rep.ok:
        raise InequalityViolationError(f"appendix estimate violated at pole {i}: margin {rep.min_margin:.3e}")
    return rep


# -- moments --------------------------------------------------------------------

@dataclass(frozen=True)
class MomentReport:
    beta: float
    pole: int
    value: float
    raw: float
    lower: float
    upper: float
    sigma_n: float

    @property
    def ok(self) -> bool:
        return self.lower <= self.value <= self.upper


def moment_lower(beta: float, b: EquivalenceBounds, dim: int) -> float:
    s = beta + dim / 2
    return b.c1 * 2 ** (s - 1) * b.alpha2_tilde ** (-s) * sphere_area(dim) * math.gamma(s)


def moment_upper(beta: float, b: EquivalenceBounds, dim: int) -> float:
    s = beta + dim / 2
    return b.c2 * 2 ** (2 * s - 1) * b.alpha1_tilde ** (-s) * sphere_area(dim) * math.gamma(s)


def moment_integral(beta: float, i: int, m: WeightedGaussianMeasure, grid: Grid | None = None) -> SingularIntegral:
    """I(beta) = int |x - a_i|^(2 beta) w(x) dx with the unnormalized weight w."""
    cfg = m.cfg
    if beta + cfg.dimension / 2 <= 0:
        raise DivergentMomentError(f"I(beta) diverges for beta={beta} <= -N/2")
    if grid is None:
        grid = Grid.for_config(cfg, 96)
    pole = cfg.poles_array[i]
    w0, gw, hw = m.weight_taylor(pole)
    return singular_quadrature(m.weight(grid.nodes), grid, pole, beta, taylor=Taylor(w0, gw, hw))


def moment_bounds(
    beta: float, i: int, m: WeightedGaussianMeasure, grid: Grid | None = None, check: bool = True
) -> MomentReport:
    cfg = m.cfg
    b = equivalence_bounds(cfg, i)
    val = moment_integral(beta, i, m, grid)
    rep = MomentReport(
        beta=beta,
        pole=i,
        value=val.corrected,
        raw=val.raw,
        lower=moment_lower(beta, b, cfg.dimension),
        upper=moment_upper(beta, b, cfg.dimension),
        sigma_n=sphere_area(cfg.dimension),
    )
    if check and not rep.ok:
        raise InequalityViolationError(
            f"moment I({beta}) = {rep.value:.6g} outside [{rep.lower:.6g}, {rep.upper:.6g}]"
        )
    return rep


def radial_moment_quadrature(beta: float, dim: int) -> float:
    """Adaptive 1-D quadrature of the radial form of :func:`gamma_moment`."""
    from scipy.integrate import quad

    p = 2 * beta + dim - 1
    val, _ = quad(lambda r: r**p * math.exp(-r * r / 2), 0, np.inf, epsabs=0, epsrel=1e-12, limit=200)
    return sphere_area(dim) * val


__all__ = [
    "WeightedGaussianMeasure",
    "density",
    "normalization",
    "closed_form_normalization",
    "sample",
    "weighted_integral",
    "singular_quadrature",
    "drift",
    "drift_gap",
    "EquivalenceBounds",
    "equivalence_bounds",
    "equivalence_check",
    "appendix_check",
    "gamma_moment",
    "moment_integral",
    "moment_bounds",
    "MomentReport",
    "sphere_area",
]
