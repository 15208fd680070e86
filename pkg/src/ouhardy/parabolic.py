"""Cut-off evolution operators, implicit Euler, and the cut-off scan."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import Grid, ProblemConfig, ScalarField, gradient, tensor_quadrature
from .discrete import cell_potential, interior
from .errors import (
    InputError,
    LinearSolverError,
    PositivityViolationError,
    RateBoundError,
    SchemeConsistencyError,
    StabilityError,
)
from .hardy import hardy_constants, schrodinger_form
from .measure import WeightedGaussianMeasure, drift

SCHEMES = ("symmetric", "upwind")
SOLVER_RTOL = 1e-10
POSITIVITY_TOL = 1e-10
MONOTONE_TOL = 1e-8
RATE_TOL = 0.5
GROWTH_DELTA = 0.05


@dataclass
class DiscreteOperator:
    """Interior rows of L + min(V, c k_cut) with homogeneous Dirichlet walls.

    ``full`` acts on full-grid vectors (boundary values included), ``matrix``
    is its interior block.  Off-diagonal entries are nonnegative, so
    I - dt * matrix is an M-matrix for dt * max(V) < 1.
    """

    cfg: ProblemConfig
    grid: Grid
    k_cut: float | None
    scheme: str
    matrix: sp.csr_matrix
    full: sp.csr_matrix
    potential: np.ndarray
    mass: np.ndarray
    stiffness: sp.csr_matrix | None = None
    _solvers: dict = field(default_factory=dict, repr=False)

    @property
    def dt_threshold(self) -> float:
        vmax = float(self.potential.max(initial=0.0))
        return math.inf if vmax <= 0 else 1.0 / vmax

    def apply(self, u: ScalarField) -> np.ndarray:
        """Operator applied to a full-grid field; values at interior nodes."""
        return (self.full @ u.values.ravel()).reshape((self.grid.points - 2,) * self.grid.dim)

    def norm(self, u_int: np.ndarray) -> float:
        u = np.ravel(u_int)
        return float(np.sqrt(np.sum(self.mass * u * u)))


def _neighbor_coefficients(cfg: ProblemConfig, grid: Grid, scheme: str):
    """Per-axis coefficients c+ and c- at interior nodes: L u = sum c+-(u_+- - u_p)."""
    dim, h = grid.dim, grid.h
    m = WeightedGaussianMeasure(cfg)
    nodes = grid.nodes[(slice(1, -1),) * dim]
    out = []
    if scheme == "symmetric":
        w0 = m.weight(nodes)
        for k in range(dim):
            shift = np.zeros(dim)
            shift[k] = h / 2
            up = m.weight(nodes + shift) / (w0 * h * h)
            lo = m.weight(nodes - shift) / (w0 * h * h)
            out.append((up, lo))
    else:
        b = drift(nodes, m)
        for k in range(dim):
            bk = b[..., k]
            out.append((1 / h**2 + np.maximum(bk, 0) / h, 1 / h**2 + np.maximum(-bk, 0) / h))
    return out


def assemble(
    cfg: ProblemConfig,
    grid: Grid,
    k_cut: float | None,
    scheme: str = "symmetric",
    absolute: bool = False,
) -> DiscreteOperator:
    """Discretize L + min(V, c k_cut) on the interior nodes."""
    if scheme not in SCHEMES:
        raise InputError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if k_cut is None and cfg.coupling != 0:
        raise InputError("an unbounded potential needs a cut-off index")
    if k_cut is not None and k_cut < 1:
        raise InputError("cut-off index must be >= 1")
    dim = grid.dim
    full_idx = np.arange(grid.points**dim).reshape(grid.shape)
    inner = interior(full_idx)
    rows = np.arange(inner.size).reshape(inner.shape)
    coeffs = _neighbor_coefficients(cfg, grid, scheme)

    r_list, c_list, v_list = [], [], []
    diag = np.zeros(inner.shape)
    for k, (up, lo) in enumerate(coeffs):
        for sign, coef in ((1, up), (-1, lo)):
            sl = [slice(1, -1)] * dim
            sl[k] = slice(1 + sign, grid.points - 1 + sign)
            cols = full_idx[tuple(sl)]
            r_list.append(rows.ravel())
            c_list.append(cols.ravel())
            v_list.append(coef.ravel())
            diag -= coef
    if cfg.coupling == 0:
        pot = np.zeros(inner.shape)
    else:
        pot = interior(cell_potential(cfg, grid, k_cut, absolute))
    r_list.append(rows.ravel())
    c_list.append(inner.ravel())
    v_list.append((diag + pot).ravel())
    full = sp.csr_matrix(
        (np.concatenate(v_list), (np.concatenate(r_list), np.concatenate(c_list))),
        shape=(inner.size, full_idx.size),
    )
    full.sum_duplicates()
    matrix = full[:, inner.ravel()].tocsr()
    m = WeightedGaussianMeasure(cfg)
    mass = (interior(m.density(grid.nodes)) * grid.cell_volume).ravel()
    stiff = None
    if scheme == "symmetric":
        # D (-L) restricted to the interior; symmetric by construction
        stiff = -(sp.diags(mass) @ (matrix - sp.diags(pot.ravel()))).tocsr()
        stiff = (0.5 * (stiff + stiff.T)).tocsr()
    return DiscreteOperator(cfg, grid, k_cut, scheme, matrix, full, pot.ravel(), mass, stiff)


def _solver_for(op: DiscreteOperator, dt: float):
    """BiCGSTAB with Jacobi preconditioning on (I - dt Op) in nodal variables.

    Nodal variables keep the residual check pointwise; the weighted symmetric
    form would tolerate large nodal errors where the density is tiny.
    """
    key = float(dt)
    if key in op._solvers:
        return op._solvers[key]
    lhs = (sp.identity(op.matrix.shape[0], format="csr") - dt * op.matrix).tocsr()
    inv_diag = 1.0 / lhs.diagonal()
    prec = spla.LinearOperator(lhs.shape, matvec=lambda x: inv_diag * x)

    def solve(u):
        x, info = spla.bicgstab(lhs, u, x0=u, rtol=SOLVER_RTOL, atol=0.0, M=prec, maxiter=2000)
        if info != 0:
            raise LinearSolverError(f"BiCGSTAB failed in implicit step (info={info})")
        return x

    op._solvers = {key: solve}
    return solve


def _check_dt(op: DiscreteOperator, dt: float) -> None:
    if not dt > 0:
        raise StabilityError("time step must be positive")
    if dt >= op.dt_threshold:
        raise StabilityError(f"dt={dt} violates the positivity threshold {op.dt_threshold:.4g}")


def step_interior(u: np.ndarray, op: DiscreteOperator, dt: float) -> np.ndarray:
    _check_dt(op, dt)
    if not np.any(u):
        return np.zeros_like(u)
    return _solver_for(op, dt)(u)


def step(u: ScalarField, op: DiscreteOperator, dt: float) -> ScalarField:
    """One implicit Euler step (I - dt Op) u+ = u with zero boundary values."""
    out = np.zeros(op.grid.shape)
    new = step_interior(interior(u.values).ravel(), op, dt)
    out[(slice(1, -1),) * op.grid.dim] = new.reshape((op.grid.points - 2,) * op.grid.dim)
    return ScalarField(op.grid, out)


# -- evolution -----------------------------------------------------------------------

def default_initial(cfg: ProblemConfig, grid: Grid, width: float = 1 / math.sqrt(2)) -> ScalarField:
    """Bump at the barycenter with unit weighted L^2 norm, zero on the walls."""
    x = grid.nodes
    r2 = np.sum((x - cfg.barycenter) ** 2, axis=-1)
    u = np.exp(-r2 / width**2)
    u[~grid.interior_mask()] = 0.0
    mu = WeightedGaussianMeasure(cfg).density(x)
    return ScalarField(grid, u / math.sqrt(tensor_quadrature(u * u * mu, grid)))


@dataclass
class EvolutionReport:
    times: np.ndarray
    norms: np.ndarray
    min_values: np.ndarray
    omega_hat: float
    m_hat: float
    k_cut: float | None
    positive: bool
    verdict: str
    final: np.ndarray = field(repr=False, default=None)
    rate_bound: float | None = None


def fit_rate(times: np.ndarray, norms: np.ndarray) -> tuple[float, float]:
    """Least-squares exponential rate over the second half of the window, and the prefactor."""
    half = times >= times[-1] / 2
    t, y = times[half], np.log(norms[half])
    if len(t) < 2:
        return math.nan, math.nan
    omega, _ = np.polyfit(t, y, 1)
    m_hat = float(np.max(norms / (norms[0] * np.exp(omega * times))))
    return float(omega), m_hat


def evolve(
    u0: ScalarField,
    cfg: ProblemConfig,
    grid: Grid,
    k_cut: float | None,
    dt: float,
    t_final: float,
    scheme: str = "symmetric",
    absolute: bool = False,
    op: DiscreteOperator | None = None,
    check_rate: bool = True,
    record_every: int = 1,
) -> EvolutionReport:
    """Implicit Euler trajectory with weighted norms and an exponential-rate fit."""
    if np.any(u0.values < 0):
        raise InputError("initial datum must be nonnegative")
    if not np.any(u0.values):
        raise InputError("initial datum must not vanish identically")
    if op is None:
        op = assemble(cfg, grid, k_cut, scheme, absolute)
    steps = int(round(t_final / dt))
    u = interior(u0.values).ravel().copy()
    scale = float(np.max(u))
    times, norms, mins = [0.0], [op.norm(u)], [float(u.min())]
    for s in range(1, steps + 1):
        u = step_interior(u, op, dt)
        low = float(u.min())
        if low < -POSITIVITY_TOL * max(scale, 1.0):
            raise PositivityViolationError(f"value {low:.3e} at step {s} (t={s * dt:.4g})")
        if s % record_every == 0 or s == steps:
            times.append(s * dt)
            norms.append(op.norm(u))
            mins.append(low)
    times_a, norms_a = np.array(times), np.array(norms)
    omega, m_hat = fit_rate(times_a, norms_a)
    K = hardy_constants(cfg).K if cfg.n > 1 else 0.5 * cfg.n * cfg.trace
    verdict = "inconclusive" if math.isnan(omega) else ("bounded" if omega <= K + RATE_TOL else "growing")
    rep = EvolutionReport(
        times=times_a,
        norms=norms_a,
        min_values=np.array(mins),
        omega_hat=omega,
        m_hat=m_hat,
        k_cut=k_cut,
        positive=bool(min(mins) >= -POSITIVITY_TOL * max(scale, 1.0)),
        verdict=verdict,
        final=u,
        rate_bound=K,
    )
    if check_rate and cfg.coupling <= cfg.c0 and not omega <= K + RATE_TOL:
        raise RateBoundError(f"fitted rate {omega:.4g} exceeds K + {RATE_TOL} = {K + RATE_TOL:.4g}")
    return rep


@dataclass
class ScanReport:
    k_cuts: list[float]
    final_norms: list[float]
    ratios: list[float]
    verdict: str
    reports: list[EvolutionReport] = field(repr=False, default_factory=list)
    hint: str = ""
    max_monotonicity_violation: float = 0.0


def _run_scan(u0, cfg, grid, k_cuts, dt, t_final, scheme, absolute):
    if list(k_cuts) != sorted(k_cuts):
        raise InputError("cut-off indices must be nondecreasing")
    return [
        evolve(u0, cfg, grid, k, dt, t_final, scheme, absolute, check_rate=False) for k in k_cuts
    ]


def monotonicity_scan(
    u0: ScalarField,
    cfg: ProblemConfig,
    grid: Grid,
    k_cuts,
    dt: float,
    t_final: float,
    scheme: str = "symmetric",
    absolute: bool = False,
    reports: list[EvolutionReport] | None = None,
) -> ScanReport:
    """Pointwise ordering of the final states in the cut-off index."""
    if reports is None:
        reports = _run_scan(u0, cfg, grid, k_cuts, dt, t_final, scheme, absolute)
    worst = 0.0
    for a, b in zip(reports, reports[1:]):
        worst = max(worst, float(np.max(a.final - b.final)))
    norms = [float(r.norms[-1]) for r in reports]
    ratios = [b / a for a, b in zip(norms, norms[1:])]
    rep = ScanReport(list(k_cuts), norms, ratios, "", reports, max_monotonicity_violation=worst)
    if worst > MONOTONE_TOL:
        raise SchemeConsistencyError(f"final states not ordered in the cut-off: excess {worst:.3e}")
    if any(b < a - MONOTONE_TOL for a, b in zip(norms, norms[1:])):
        raise SchemeConsistencyError("final norms decrease along the cut-off sequence")
    return rep


def classify(ratios: list[float], delta: float = GROWTH_DELTA) -> tuple[str, str]:
    """Verdict from successive norm ratios along the cut-off sequence."""
    tail = ratios[-3:]
    if len(tail) == 3 and all(r > 1 + delta for r in tail) and all(b >= a for a, b in zip(tail, tail[1:])):
        return "growing", ""
    if ratios and ratios[-1] <= 1 + delta and all(b <= a + 1e-12 for a, b in zip(ratios, ratios[1:])):
        return "bounded", ""
    return "inconclusive", "extend the cut-off sequence or refine the grid and time step"


def blowup_scan(
    u0: ScalarField,
    cfg: ProblemConfig,
    grid: Grid,
    k_cuts,
    dt: float,
    t_final: float,
    scheme: str = "symmetric",
    absolute: bool = False,
    delta: float = GROWTH_DELTA,
) -> ScanReport:
    """Norm growth of the cut-off solutions at the final time."""
    if len(k_cuts) < 4:
        raise InputError("the scan needs at least four cut-off indices")
    rep = monotonicity_scan(u0, cfg, grid, k_cuts, dt, t_final, scheme, absolute)
    rep.verdict, rep.hint = classify(rep.ratios, delta)
    return rep


def expected_verdict(cfg: ProblemConfig) -> str:
    return "bounded" if cfg.coupling <= cfg.c0 else "growing"


# -- coercivity -----------------------------------------------------------------------

@dataclass
class CoercivityReport:
    quotients: list[float]
    min_quotient: float
    bound: float
    worst_probe: dict

    @property
    def ok(self) -> bool:
        return self.min_quotient >= self.bound - 1e-9


def form_quotient(u: np.ndarray, form) -> float:
    """Discrete a_c(u, u) / ||u||^2 for interior unknowns."""
    u = np.ravel(u)
    d = form.mass
    s = np.sqrt(d) * u
    return float(s @ (form.matrix @ s)) / float(np.sum(d * u * u))


def coercivity_check(
    cfg: ProblemConfig,
    grid: Grid,
    probes: int = 100,
    seed: int = 0,
    k: float | None = None,
    extra: list | None = None,
) -> CoercivityReport:
    """Rayleigh quotients of the discrete form over random bump probes against -K."""
    from .hardy import random_bumps

    form = schrodinger_form(cfg, grid, None)
    K = hardy_constants(cfg, k).K
    bumps = random_bumps(cfg, probes, seed) + list(extra or [])
    qs = []
    worst = None
    for b in bumps:
        u = interior(b(grid.nodes))
        q = form_quotient(u, form)
        qs.append(q)
        if worst is None or q < worst[0]:
            worst = (q, b)
    return CoercivityReport(
        quotients=qs,
        min_quotient=float(min(qs)),
        bound=-K,
        worst_probe={"center": list(map(float, worst[1].center)), "width": worst[1].width},
    )


def integration_by_parts_defect(op: DiscreteOperator, u: ScalarField, v: ScalarField) -> float:
    """|int grad u . grad v dmu + int (L_h u) v dmu| with central differences and trapezoid sums."""
    grid = op.grid
    mu = WeightedGaussianMeasure(op.cfg).density(grid.nodes)
    gu = gradient(u).values
    gv = gradient(v).values
    first = tensor_quadrature(np.sum(gu * gv, axis=0) * mu, grid)
    lu = op.apply(u) - op.potential.reshape((grid.points - 2,) * grid.dim) * interior(u.values)
    second = float(np.sum(lu * interior(v.values) * interior(mu))) * grid.cell_volume
    return abs(first + second)
