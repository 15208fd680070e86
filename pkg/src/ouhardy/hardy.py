"""Multipolar potential, weighted Hardy reports, bottom of the spectrum, optimality probe."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .core import Grid, ProblemConfig, ScalarField, tensor_quadrature
from .discrete import cell_potential, edge_dirichlet, interior, mass, stiffness
from .eigen import smallest_eigenpair
from .errors import DegenerateInputError, DomainError, InputError, SingularityError
from .measure import (
    WeightedGaussianMeasure,
    equivalence_bounds,
    moment_integral,
    singular_quadrature,
)

BOUNDARY_TRACE_TOL = 1e-10
BUMP_FLOOR = 1e-8


def potential(x, cfg: ProblemConfig) -> np.ndarray:
    """c * sum_i |x - a_i|^-2, vectorized over leading axes."""
    x = np.asarray(x, dtype=float)
    total = np.zeros(x.shape[:-1])
    for a in cfg.poles_array:
        r2 = np.sum((x - a) ** 2, axis=-1)
        if np.any(r2 == 0):
            raise SingularityError(f"potential evaluated at the pole {tuple(a)}")
        total = total + 1.0 / r2
    return cfg.coupling * total


@dataclass(frozen=True)
class HardyConstants:
    coupling: float
    ims_k: float
    r0: float
    K: float
    K_improved: float
    c0: float


def hardy_constants(cfg: ProblemConfig, k: float | None = None) -> HardyConstants:
    k = cfg.ims_k if k is None else float(k)
    tr_part = 0.5 * cfg.n * cfg.trace
    geo = (k + (cfg.n + 1) * cfg.coupling) / cfg.r0**2 if cfg.n > 1 else 0.0
    return HardyConstants(cfg.coupling, k, cfg.r0, geo + tr_part, tr_part, cfg.c0)


@dataclass
class HardyReport:
    lhs: float
    dirichlet: float
    mass: float
    K: float
    points: int
    raw_lhs: float = math.nan
    error: float = math.nan

    @property
    def rhs(self) -> float:
        return self.dirichlet + self.K * self.mass

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        err = 0.0 if math.isnan(self.error) else self.error
        return self.margin >= -err


@lru_cache(maxsize=8)
def _density_on(cfg: ProblemConfig, grid: Grid) -> np.ndarray:
    d = WeightedGaussianMeasure(cfg).density(grid.nodes)
    d.setflags(write=False)
    return d


def _boundary_trace(values: np.ndarray) -> float:
    worst = 0.0
    for k in range(values.ndim):
        for end in (0, -1):
            sl = [slice(None)] * values.ndim
            sl[k] = end
            worst = max(worst, float(np.max(np.abs(values[tuple(sl)]))))
    return worst


def form_terms(phi: ScalarField, cfg: ProblemConfig):
    """Weighted Dirichlet integral, mass, and per-pole inverse-square integrals."""
    grid = phi.grid
    v = phi.values
    if not np.any(v):
        raise DegenerateInputError("test function vanishes identically")
    if _boundary_trace(v) > BOUNDARY_TRACE_TOL * max(1.0, float(np.max(np.abs(v)))):
        raise InputError("test function must vanish on the boundary of the grid box")
    mu = _density_on(cfg, grid)
    dirichlet = edge_dirichlet(v, grid, WeightedGaussianMeasure(cfg))
    mass_ = tensor_quadrature(v * v * mu, grid)
    singular = [singular_quadrature(v * v * mu, grid, a, -1.0) for a in cfg.poles_array]
    return dirichlet, mass_, singular


def hardy_report(
    phi: ScalarField,
    cfg: ProblemConfig,
    k: float | None = None,
    constant: float | None = None,
) -> HardyReport:
    """Both sides of the weighted multipolar Hardy inequality for one test function."""
    dirichlet, mass_, singular = form_terms(phi, cfg)
    K = hardy_constants(cfg, k).K if constant is None else float(constant)
    return HardyReport(
        lhs=cfg.coupling * sum(s.corrected for s in singular),
        dirichlet=dirichlet,
        mass=mass_,
        K=K,
        points=phi.grid.points,
        raw_lhs=cfg.coupling * sum(s.raw for s in singular),
    )


def improved_report(phi: ScalarField, cfg: ProblemConfig) -> HardyReport:
    """Coupling c0/n with right-hand constant (n/2) Tr A."""
    cfg = cfg.with_coupling(cfg.c0 / cfg.n)
    return hardy_report(phi, cfg, constant=0.5 * cfg.n * cfg.trace)


# -- test bumps -----------------------------------------------------------------

@dataclass(frozen=True)
class Bump:
    """exp(-|x - center|^2 / width^2), shifted down by a floor and clipped at zero."""

    center: tuple[float, ...]
    width: float
    amplitude: float = 1.0

    @property
    def support_radius(self) -> float:
        return self.width * math.sqrt(-math.log(BUMP_FLOOR))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        r2 = np.sum((np.asarray(x) - np.asarray(self.center)) ** 2, axis=-1)
        return self.amplitude * np.maximum(np.exp(-r2 / self.width**2) - BUMP_FLOOR, 0.0)

    def field(self, grid: Grid) -> ScalarField:
        return ScalarField(grid, self(grid.nodes))


def random_bumps(
    cfg: ProblemConfig,
    count: int,
    seed: int = 0,
    center_radius: float = 1.2,
    widths: tuple[float, float] = (0.25, 0.6),
) -> list[Bump]:
    """Bumps with centers uniform in a ball around the barycenter."""
    rng = np.random.default_rng(seed)
    out = []
    dim = cfg.dimension
    for _ in range(count):
        d = rng.standard_normal(dim)
        d /= np.linalg.norm(d)
        r = center_radius * rng.random() ** (1 / dim)
        w = rng.uniform(*widths)
        out.append(Bump(tuple(cfg.barycenter + r * d), float(w)))
    return out


@dataclass
class RefinedReport:
    coarse: HardyReport
    fine: HardyReport

    @property
    def error(self) -> float:
        return abs(self.fine.margin - self.coarse.margin)

    @property
    def margin(self) -> float:
        return self.coarse.margin

    @property
    def holds(self) -> bool:
        return self.margin >= -self.error


def refined_report(bump: Bump, cfg: ProblemConfig, grid: Grid, improved: bool = False, k: float | None = None) -> RefinedReport:
    """Report on ``grid`` with an error bar from one halving of the spacing."""
    fn = improved_report if improved else (lambda f, c: hardy_report(f, c, k))
    coarse = fn(bump.field(grid), cfg)
    fine = fn(bump.field(grid.refine()), cfg)
    coarse.error = abs(fine.margin - coarse.margin)
    return RefinedReport(coarse, fine)


# -- bottom of the spectrum -------------------------------------------------------

@dataclass
class SpectralEstimate:
    value: float
    k_cut: float | None
    iterations: int
    residual: float
    positive: bool
    points: int
    vector: np.ndarray | None = field(default=None, repr=False)

    def bounded_potential_floor(self, cfg: ProblemConfig) -> float:
        """Lowest value the capped potential allows for the eigenvalue."""
        if self.k_cut is None:
            return -math.inf
        return -cfg.coupling * self.k_cut * cfg.n


@dataclass
class SchrodingerForm:
    """Symmetrized matrix D^-1/2 K D^-1/2 - diag(V) on interior unknowns."""

    matrix: sp.csr_matrix
    stiffness: sp.csr_matrix
    mass: np.ndarray
    potential: np.ndarray


def schrodinger_form(cfg: ProblemConfig, grid: Grid, k_cut: float | None, absolute: bool = False) -> SchrodingerForm:
    m = WeightedGaussianMeasure(cfg)
    stiff = stiffness(grid, m)
    mdiag = mass(grid, m)
    if cfg.coupling == 0:
        v = np.zeros_like(mdiag)
    else:
        v = interior(cell_potential(cfg, grid, k_cut, absolute)).ravel()
    s = sp.diags(1.0 / np.sqrt(mdiag))
    mat = (s @ stiff @ s - sp.diags(v)).tocsr()
    return SchrodingerForm(mat, stiff, mdiag, v)


def lambda1_estimate(
    cfg: ProblemConfig,
    grid: Grid,
    k_cut: float | None = None,
    absolute: bool = False,
    tol: float = 1e-8,
    keep_vector: bool = False,
) -> SpectralEstimate:
    """Smallest eigenvalue of the discrete weighted Schrodinger form with Dirichlet walls."""
    if cfg.n > 1 and grid.h > cfg.r0 / 8:
        warnings.warn(
            f"grid spacing {grid.h:.3g} exceeds r0/8 = {cfg.r0 / 8:.3g}; pole gap is under-resolved",
            stacklevel=2,
        )
    form = schrodinger_form(cfg, grid, k_cut, absolute)
    lower = -float(form.potential.max(initial=0.0)) - 1.0
    pair = smallest_eigenpair(form.matrix, lower, tol=tol)
    vec = None
    if keep_vector:
        vec = pair.vector / np.sqrt(form.mass)
    return SpectralEstimate(pair.value, k_cut, pair.iterations, pair.residual, pair.positive, grid.points, vec)


# -- optimality probe ---------------------------------------------------------------

@dataclass
class OptimalityProbe:
    gamma: float
    pole: int
    coupling: float
    i_gamma: float
    i_gamma_minus_1: float
    ratio_lower_bound: float
    full_potential_quotient: float | None = None

    @property
    def ratio(self) -> float:
        return self.i_gamma_minus_1 / self.i_gamma

    @property
    def r_bound(self) -> float:
        return (self.gamma**2 - self.coupling) * self.ratio

    @property
    def closed_form_bound(self) -> float:
        """(gamma^2 - c) times the ratio lower bound; dominates r_bound when gamma^2 < c."""
        return (self.gamma**2 - self.coupling) * self.ratio_lower_bound


def moment_ratio_lower_bound(gamma: float, i: int, cfg: ProblemConfig) -> float:
    b = equivalence_bounds(cfg, i)
    s = gamma + cfg.dimension / 2
    num = b.c1 * 2 ** (s - 2) * b.alpha2_tilde ** (-s + 1)
    den = b.c2 * 2 ** (2 * s - 1) * b.alpha1_tilde ** (-s) * (s - 1)
    return num / den


def optimality_probe(
    gamma: float,
    i: int,
    cfg: ProblemConfig,
    grid: Grid | None = None,
    full_potential: bool = False,
) -> OptimalityProbe:
    """Rayleigh-quotient bound for |x - a_i|^gamma from exact weighted moments."""
    dim = cfg.dimension
    if not (1 - dim / 2 < gamma < 0):
        raise DomainError(f"gamma={gamma} outside ({1 - dim / 2}, 0)")
    m = WeightedGaussianMeasure(cfg)
    if grid is None:
        grid = Grid.for_config(cfg, 96)
    i_g = moment_integral(gamma, i, m, grid).corrected
    i_g1 = moment_integral(gamma - 1, i, m, grid).corrected
    probe = OptimalityProbe(gamma, i, cfg.coupling, i_g, i_g1, moment_ratio_lower_bound(gamma, i, cfg))
    if full_potential and cfg.n > 1:
        probe.full_potential_quotient = probe.r_bound - cfg.coupling * _cross_terms(gamma, i, m, grid) / i_g
    return probe


def _cross_terms(gamma: float, i: int, m: WeightedGaussianMeasure, grid: Grid) -> float:
    """sum_{j != i} int |x-a_i|^(2 gamma) |x-a_j|^-2 w dx, split so each piece has one singular point."""
    poles = m.cfg.poles_array
    ai = poles[i]
    total = 0.0
    for j, aj in enumerate(poles):
        if j == i:
            continue

        def near_i(x, aj=aj):
            ri2 = np.sum((x - ai) ** 2, axis=-1)
            rj2 = np.sum((x - aj) ** 2, axis=-1)
            return m.weight(x) / (ri2 + rj2)

        def near_j(x, aj=aj):
            ri2 = np.sum((x - ai) ** 2, axis=-1)
            rj2 = np.sum((x - aj) ** 2, axis=-1)
            return ri2 ** (gamma + 1) * m.weight(x) / (ri2 + rj2)

        total += singular_quadrature(near_i, grid, ai, gamma).corrected
        total += singular_quadrature(near_j, grid, aj, -1.0).corrected
    return total
