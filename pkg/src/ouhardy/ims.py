"""Partition of unity around the poles and the localization of the Hardy form."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Grid, ProblemConfig, ScalarField, gradient, tensor_quadrature
from .errors import ChainViolationError, GeometryError, IdentityViolationError, InputError
from .discrete import edge_dirichlet, edge_gradient_sum, edge_weights
from .measure import WeightedGaussianMeasure, singular_quadrature

PROFILES = ("cosine", "smooth")
PI2 = math.pi**2
# k_hat is declared below pi^2 only with this much room
K_HAT_MARGIN = 1e-9


@dataclass(frozen=True)
class PartitionOfUnity:
    """Radial members J_1..J_n around the poles plus the complement J_{n+1}.

    J_i = cos(theta_i), theta_i = (pi/2) * phase(s), s the normalized radius in
    the annulus between the plateau rho*R and the support radius R.
    """

    cfg: ProblemConfig
    rho: float = 0.5
    profile: str = "cosine"
    support_radius: float | None = None

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise InputError(f"rho must lie in (0, 1), got {self.rho}")
        if self.profile not in PROFILES:
            raise InputError(f"unknown profile {self.profile!r}; expected one of {PROFILES}")
        r0 = self.cfg.r0
        rs = r0 if self.support_radius is None else float(self.support_radius)
        if not math.isfinite(rs) or rs <= 0:
            raise GeometryError("a single pole needs an explicit support radius", "poles")
        if rs > r0 * (1 + 1e-12):
            raise GeometryError(f"support radius {rs} exceeds r0={r0}; supports overlap", "poles")
        object.__setattr__(self, "support_radius", rs)

    @property
    def n(self) -> int:
        return self.cfg.n

    @property
    def plateau(self) -> float:
        return self.rho * self.support_radius

    @property
    def width(self) -> float:
        return (1 - self.rho) * self.support_radius

    def phase(self, s: np.ndarray):
        """theta(s) and d theta / d s."""
        if self.profile == "cosine":
            return 0.5 * math.pi * s, np.full_like(s, 0.5 * math.pi)
        return 0.5 * math.pi * s * s * (3 - 2 * s), 3 * math.pi * s * (1 - s)

    @property
    def f_bound(self) -> float:
        """Closed-form bound of |grad J_i|^2 / (1 - J_i^2) on the annulus."""
        peak = 0.5 * math.pi if self.profile == "cosine" else 0.75 * math.pi
        return (peak / self.width) ** 2

    def evaluate(self, x: np.ndarray) -> "PartitionValues":
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        n = self.n
        J = np.zeros((n + 1,) + shape)
        G = np.zeros((n + 1,) + x.shape)
        comp = np.ones((n,) + shape)
        F = np.zeros((n,) + shape)
        annulus = np.zeros((n,) + shape, dtype=bool)
        comp_grad = np.zeros(x.shape)
        for i, a in enumerate(self.cfg.poles_array):
            y = x - a
            r = np.sqrt(np.sum(y * y, axis=-1))
            s = np.clip((r - self.plateau) / self.width, 0.0, 1.0)
            theta, dtheta = self.phase(s)
            ring = (r > self.plateau) & (r < self.support_radius)
            inside = r <= self.plateau
            with np.errstate(invalid="ignore", divide="ignore"):
                rhat = np.where(r[..., None] > 0, y / r[..., None], 0.0)
            tp = np.where(ring, dtheta / self.width, 0.0)
            sin, cos = np.sin(theta), np.cos(theta)
            J[i] = np.where(inside, 1.0, np.where(ring, cos, 0.0))
            G[i] = (-sin * tp)[..., None] * rhat
            comp[i] = np.where(inside, 0.0, np.where(ring, sin * sin, 1.0))
            F[i] = tp * tp
            annulus[i] = ring
            comp_grad += (cos * tp)[..., None] * rhat
        J[n] = np.sqrt(np.clip(1.0 - np.sum(J[:n] ** 2, axis=0), 0.0, None))
        G[n] = comp_grad
        return PartitionValues(J, G, comp, F, annulus)

    def in_support(self, x: np.ndarray) -> np.ndarray:
        """Boolean (n, ...) masks of the closed balls B(a_i, R)."""
        x = np.asarray(x, dtype=float)
        return np.stack(
            [np.sum((x - a) ** 2, axis=-1) <= self.support_radius**2 for a in self.cfg.poles_array]
        )


@dataclass
class PartitionValues:
    J: np.ndarray  # (n+1, ...)
    grad: np.ndarray  # (n+1, ..., N)
    complement: np.ndarray  # (n, ...) = 1 - J_i^2
    F: np.ndarray  # (n, ...) = |grad J_i|^2 / (1 - J_i^2) on the annulus
    annulus: np.ndarray


def build_partition(cfg: ProblemConfig, rho: float = 0.5, profile: str = "cosine") -> PartitionOfUnity:
    if cfg.n < 2:
        raise GeometryError("the partition needs at least two poles", "poles")
    return PartitionOfUnity(cfg, rho, profile)


# -- partition properties ---------------------------------------------------------

COMPLEMENT_FLOOR = 1e-8


def partition_properties(p: PartitionOfUnity, grid: Grid) -> dict[str, float]:
    """Largest violation of each partition property over the grid nodes."""
    v = p.evaluate(grid.nodes)
    n = p.n
    out = {}
    out["sum_of_squares"] = float(np.max(np.abs(np.sum(v.J**2, axis=0) - 1.0)))
    cross = np.einsum("i...,i...k->...k", v.J, v.grad)
    out["orthogonality"] = float(np.max(np.abs(cross)))
    g2 = np.sum(v.grad**2, axis=-1)
    lhs = np.sum(g2, axis=0)
    ok = np.all(v.complement > COMPLEMENT_FLOOR, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(v.complement > COMPLEMENT_FLOOR, g2[:n] / v.complement, 0.0)
    rhs = np.sum(ratio, axis=0)
    out["gradient_sum"] = float(np.max(np.abs(lhs - rhs)[ok])) if ok.any() else 0.0
    # |grad J_i|^2 = F (1 - J_i^2) with F bounded by the profile constant
    out["f_constraint"] = float(np.max(np.abs(g2[:n] - v.F * v.complement)))
    out["f_excess"] = max(0.0, float(np.max(v.F)) - p.f_bound)
    supports = p.in_support(grid.nodes)
    # closed balls may touch on their common boundary, where every J_i vanishes
    overlap = np.sum(supports, axis=0) > 1
    out["disjoint_supports"] = float(np.max(np.abs(v.J[:n][:, overlap]), initial=0.0))
    return out


PROPERTY_TOLERANCES = {
    "sum_of_squares": 1e-12,
    "orthogonality": 1e-10,
    "gradient_sum": 1e-10,
    "f_constraint": 1e-10,
    "f_excess": 1e-12,
    "disjoint_supports": 1e-12,
}


def fd_gradient_error(p: PartitionOfUnity, grid: Grid, collar: int = 1) -> float:
    """Max difference between analytic and central-difference gradients.

    Nodes whose stencil reaches a kink of the profile (plateau edge or support
    boundary) are skipped, as are the faces of the box.
    """
    v = p.evaluate(grid.nodes)
    worst = 0.0
    reach = (collar + 1) * grid.h
    inner = np.zeros(grid.shape, dtype=bool)
    inner[(slice(1, -1),) * grid.dim] = True
    for i, a in enumerate(p.cfg.poles_array):
        r = np.sqrt(np.sum((grid.nodes - a) ** 2, axis=-1))
        mask = inner & (np.abs(r - p.plateau) > reach) & (np.abs(r - p.support_radius) > reach)
        if not mask.any():
            continue
        fd = np.moveaxis(gradient(ScalarField(grid, v.J[i])).values, 0, -1)
        worst = max(worst, float(np.max(np.abs(fd - v.grad[i])[mask])))
    return worst


# -- pointwise two-pole bound ----------------------------------------------------------

@dataclass
class KHat:
    value: float
    pair: tuple[int, int]
    location: np.ndarray
    coupling: float

    @property
    def below_pi2(self) -> bool:
        return self.value < PI2 - K_HAT_MARGIN


def _fibonacci_sphere(count: int, dim: int) -> np.ndarray:
    if dim != 3:
        rng = np.random.default_rng(12345)
        d = rng.standard_normal((count, dim))
        return d / np.linalg.norm(d, axis=1, keepdims=True)
    k = np.arange(count) + 0.5
    z = 1 - 2 * k / count
    phi = math.pi * (1 + 5**0.5) * k
    rr = np.sqrt(1 - z * z)
    return np.stack([rr * np.cos(phi), rr * np.sin(phi), z], axis=1)


def _annulus_samples(p: PartitionOfUnity, i: int, j: int, radial: int, angular: int) -> np.ndarray:
    ai, aj = p.cfg.poles_array[i], p.cfg.poles_array[j]
    toward = (aj - ai) / np.linalg.norm(aj - ai)
    dirs = np.vstack([toward, _fibonacci_sphere(angular, p.cfg.dimension)])
    # open annulus samples plus the one-sided limit at the support radius
    radii = p.plateau + p.width * np.linspace(0, 1, radial + 1)[1:]
    return ai + radii[:, None, None] * dirs[None, :, :]


def _lemma_expression(p: PartitionOfUnity, i: int, j: int, c: float, x: np.ndarray, limit: bool) -> np.ndarray:
    """r0^2 [F_i + c (1 - J_i^2) V_pair] - 2c on the closed annulus around a_i."""
    ai, aj = p.cfg.poles_array[i], p.cfg.poles_array[j]
    ri = np.sqrt(np.sum((x - ai) ** 2, axis=-1))
    rj2 = np.sum((x - aj) ** 2, axis=-1)
    s = np.clip((ri - p.plateau) / p.width, 0.0, 1.0)
    theta, dtheta = p.phase(s)
    ring = (ri > p.plateau) & ((ri <= p.support_radius) if limit else (ri < p.support_radius))
    F = np.where(ring, (dtheta / p.width) ** 2, 0.0)
    comp = np.where(ri <= p.plateau, 0.0, np.where(ring, np.sin(theta) ** 2, 1.0))
    val = F + c * comp * (1.0 / np.maximum(ri * ri, 1e-300) + 1.0 / rj2)
    r0 = p.cfg.r0
    return np.where(ring | (ri <= p.support_radius), r0 * r0 * val - 2 * c, -np.inf)


def lemma3_bound(
    p: PartitionOfUnity,
    c: float,
    pair: tuple[int, int] | None = None,
    grid: Grid | None = None,
    radial: int = 400,
    angular: int = 600,
) -> KHat:
    """Measured k such that the two-pole pointwise bound holds on the supports.

    The supremum is taken over each closed annulus separately (the bound only
    has to hold almost everywhere), using radial and angular samples together
    with the grid nodes when a grid is given.
    """
    cfg = p.cfg
    if c <= 0:
        raise InputError("coupling must be positive")
    if pair is None:
        poles = cfg.poles_array
        pairs = []
        for i in range(cfg.n):
            d = np.linalg.norm(poles - poles[i], axis=1)
            d[i] = np.inf
            pairs.append((i, int(np.argmin(d))))
    else:
        pairs = [tuple(pair)]
    best = KHat(-math.inf, pairs[0], np.asarray(cfg.poles_array[pairs[0][0]]), c)
    for i, j in pairs:
        chunks = [(_annulus_samples(p, i, j, radial, angular), True)]
        if grid is not None:
            chunks.append((grid.nodes, False))
        for pts, limit in chunks:
            vals = _lemma_expression(p, i, j, c, pts, limit)
            k = int(np.argmax(vals))
            if vals.flat[k] > best.value:
                loc = pts.reshape(-1, cfg.dimension)[k]
                best = KHat(float(vals.flat[k]), (i, j), loc, c)
    return best


# -- localization identity -------------------------------------------------------------

def _energy(values: np.ndarray, grid: Grid, mu: np.ndarray) -> float:
    g = gradient(ScalarField(grid, values))
    return tensor_quadrature(g.norm2() * mu, grid)


def _fd_gradient_sum(J: np.ndarray, grid: Grid) -> np.ndarray:
    total = np.zeros(grid.shape)
    for member in J:
        total += gradient(ScalarField(grid, member)).norm2()
    return total


@dataclass
class IdentityReport:
    lhs: float
    pieces: list[float]
    gradient_term: float
    points: int

    @property
    def rhs(self) -> float:
        return sum(self.pieces) - self.gradient_term

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs)


def regularized_potential(cfg: ProblemConfig, grid: Grid) -> ScalarField:
    """Nodal potential capped at the value it takes half a spacing from a pole."""
    x = grid.nodes
    v = np.zeros(grid.shape)
    for a in cfg.poles_array:
        r2 = np.sum((x - a) ** 2, axis=-1)
        v += 1.0 / np.maximum(r2, (grid.h / 2) ** 2)
    return ScalarField(grid, cfg.coupling * v)


def ims_identity(phi: ScalarField, V: ScalarField | None, p: PartitionOfUnity) -> IdentityReport:
    """Both sides of the localization identity with central-difference gradients.

    The potential parts agree node by node because the squares of the members
    sum to one; the gradient parts agree up to O(h^2).
    """
    grid = phi.grid
    cfg = p.cfg
    mu = WeightedGaussianMeasure(cfg).density(grid.nodes)
    vv = np.zeros(grid.shape) if V is None else V.values
    u = phi.values
    lhs = _energy(u, grid, mu) - tensor_quadrature(vv * u * u * mu, grid)
    J = p.evaluate(grid.nodes).J
    pieces = []
    for member in J:
        w = member * u
        pieces.append(_energy(w, grid, mu) - tensor_quadrature(vv * w * w * mu, grid))
    gsum = tensor_quadrature(_fd_gradient_sum(J, grid) * u * u * mu, grid)
    return IdentityReport(lhs, pieces, gsum, grid.points)


@dataclass
class RefinedIdentity:
    coarse: IdentityReport
    fine: IdentityReport

    @property
    def error_estimate(self) -> float:
        return abs(self.fine.lhs - self.coarse.lhs)

    @property
    def order_ratio(self) -> float:
        return self.coarse.residual / self.fine.residual if self.fine.residual > 0 else math.inf

    @property
    def ok(self) -> bool:
        return self.coarse.residual <= 5 * self.error_estimate


def ims_identity_refined(bump, p: PartitionOfUnity, grid: Grid, with_potential: bool = True, check: bool = True) -> RefinedIdentity:
    reps = []
    for g in (grid, grid.refine()):
        V = regularized_potential(p.cfg, g) if with_potential else None
        reps.append(ims_identity(ScalarField(g, bump(g.nodes)), V, p))
    out = RefinedIdentity(*reps)
    if check and not out.ok:
        raise IdentityViolationError(
            f"localization residual {out.coarse.residual:.3e} exceeds 5x error estimate {out.error_estimate:.3e}"
        )
    return out


# -- quadratic form and the lower-bound chain -------------------------------------------

@dataclass
class ChainStep:
    display: str
    lhs: float
    rhs: float
    tol: float
    relation: str = ">="

    @property
    def holds(self) -> bool:
        if self.relation == "=":
            return abs(self.lhs - self.rhs) <= self.tol
        return self.lhs >= self.rhs - self.tol


@dataclass
class FormReport:
    q: float
    localized: list[float]
    remainder: float
    gradient_sum: float
    mass: float
    mass_omega: list[float]
    mass_gamma: float
    k_hat: float
    constants: dict[str, float]
    steps: list[ChainStep] = field(default_factory=list)

    @property
    def chain_lower(self) -> float:
        return -self.constants["K_proof"] * self.mass

    @property
    def decomposition_residual(self) -> float:
        return abs(self.q - (sum(self.localized) + self.remainder))

    @property
    def violations(self) -> list[ChainStep]:
        return [s for s in self.steps if not s.holds]


class _EdgeForms:
    """Edge-form energies and singular potential integrals on one grid."""

    def __init__(self, cfg: ProblemConfig, grid: Grid):
        self.cfg = cfg
        self.grid = grid
        m = WeightedGaussianMeasure(cfg)
        self.mu = m.density(grid.nodes)
        self.weights = edge_weights(grid, m)

    def integral(self, f: np.ndarray) -> float:
        return tensor_quadrature(f * self.mu, self.grid)

    def potential(self, f: np.ndarray) -> float:
        """c * sum_i int f / |x - a_i|^2 dmu for a nodal f smooth at the poles."""
        cfg = self.cfg
        g = f * self.mu
        return cfg.coupling * sum(
            singular_quadrature(g, self.grid, a, -1.0).corrected for a in cfg.poles_array
        )

    def q(self, u: np.ndarray) -> float:
        return edge_dirichlet(u, self.grid, None, self.weights) - self.potential(u * u)


def q_form(phi: ScalarField, cfg: ProblemConfig) -> float:
    """Q[phi] = int |grad phi|^2 dmu - c int V phi^2 dmu."""
    return _EdgeForms(cfg, phi.grid).q(phi.values)


def chain_bound(
    phi: ScalarField,
    cfg: ProblemConfig,
    p: PartitionOfUnity,
    k_hat: float | None = None,
    rtol: float = 1e-9,
    raise_on_fail: bool = True,
) -> FormReport:
    """Evaluate every display of the localization chain for one test function.

    Energies use the edge form, for which the discrete product rule is exact,
    so the decomposition holds to rounding.  Each inequality is checked with a
    tolerance of ``rtol`` times the size of the quantities involved; the step
    that trades the discrete gradient sum for the profile formula also carries
    the measured gap between the two.
    """
    grid = phi.grid
    n, c, r0, tr = cfg.n, cfg.coupling, cfg.r0, cfg.trace
    if k_hat is None:
        k_hat = lemma3_bound(p, c, grid=grid).value if c > 0 else lemma3_bound(p, 1e-300, grid=grid).value
    forms = _EdgeForms(cfg, grid)
    quad = forms.integral
    u = phi.values
    pv = p.evaluate(grid.nodes)
    J = pv.J

    q = forms.q(u)
    localized = [forms.q(J[i] * u) for i in range(n)]
    gradient_sum = edge_gradient_sum(J, u, forms.weights)
    remainder = forms.q(J[n] * u) - gradient_sum

    mass = quad(u * u)
    supports = p.in_support(grid.nodes)
    gamma_mask = ~np.any(supports, axis=0)
    mass_omega = [quad(np.where(supports[i], u * u, 0.0)) for i in range(n)]
    mass_omega_j2 = [quad(np.where(supports[i], J[i] ** 2 * u * u, 0.0)) for i in range(n)]
    mass_gamma = quad(np.where(gamma_mask, u * u, 0.0))
    poles = cfg.poles_array

    K_proof = (k_hat + (n + 1) * c) / r0**2 + 0.5 * tr
    K_theorem = (cfg.ims_k + (n + 1) * c) / r0**2 + 0.5 * n * tr
    constants = {
        "lemma": (k_hat + 2 * c) / r0**2,
        "far_poles": (n - 2) * c / r0**2,
        "one_pole": (n - 1) * c / r0**2,
        "far_region": c * n / r0**2,
        "K_proof": K_proof,
        "K_theorem": K_theorem,
    }
    scale = abs(q) + abs(remainder) + gradient_sum + mass * (1 + K_proof) + sum(map(abs, localized))
    tol = rtol * scale
    steps: list[ChainStep] = []

    def add(display, lhs, rhs, t=tol, relation=">="):
        steps.append(ChainStep(display, float(lhs), float(rhs), float(t), relation))

    add("Q = sum Q[J_i phi] + R_n", q, sum(localized) + remainder, relation="=")

    # the gradient sum equals sum F_i (1 - J_i^2) / (1 - J_i^2)
    comp_sum = 1.0 - np.sum(J[:n] ** 2, axis=0)
    f_sum = np.sum(np.where(pv.annulus, pv.F, 0.0), axis=0)
    profile_sum = quad(f_sum * u * u)
    rn_d = -forms.potential(comp_sum * u * u) - profile_sum
    gap = abs(gradient_sum - profile_sum)
    add("R_n >= -c int V (1 - sum J_i^2) phi^2 - sum int F_i phi^2", remainder, rn_d, tol + gap)

    local = np.zeros(grid.shape)
    local_far = np.zeros(grid.shape)
    for i in range(n):
        d = np.linalg.norm(poles - poles[i], axis=1)
        d[i] = np.inf
        j = int(np.argmin(d))
        others = np.zeros(grid.shape)
        for k in range(n):
            if k not in (i, j):
                others += 1.0 / np.sum((grid.nodes - poles[k]) ** 2, axis=-1)
        local += np.where(supports[i], constants["lemma"] + c * pv.complement[i] * others, 0.0)
        local_far += np.where(supports[i], constants["lemma"] + constants["far_poles"] * pv.complement[i], 0.0)
    far = constants["far_region"] * mass_gamma
    rn1 = -quad(local * u * u) - far
    rn2 = -quad(local_far * u * u) - far
    add("two-pole lemma on each support", rn_d, rn1)
    add("far poles bounded by 1/r0^2", rn1, rn2)
    add("R_n lower bound", remainder, rn2, tol + gap)

    for i in range(n):
        rhs_i = -(0.5 * tr + constants["one_pole"]) * quad(np.where(supports[i], (J[i] * u) ** 2, 0.0))
        add(f"one-pole bound for Q[J_{i + 1} phi]", localized[i], rhs_i)
    somma = -0.5 * tr * sum(mass_omega) - constants["one_pole"] * sum(mass_omega_j2)
    add("sum of localized forms", sum(localized), somma)

    assembled = np.zeros(grid.shape)
    for i in range(n):
        assembled += np.where(
            supports[i],
            constants["lemma"]
            + constants["far_poles"] * (1 - J[i] ** 2)
            + 0.5 * tr
            + constants["one_pole"] * J[i] ** 2,
            0.0,
        )
    add("assembled lower bound", q, -quad(assembled * u * u) - far, tol + gap)
    algebra = max(
        float(np.max(c * (n - 2) * (1 - J[i] ** 2) + c * (n - 1) * J[i] ** 2 - c * (n - 1)))
        for i in range(n)
    )
    add("k + cn + cJ_i^2 <= k + c(n+1)", 0.0, algebra, 1e-12)
    omega_mass = quad(np.where(gamma_mask, 0.0, u * u))
    add("proof constant on Omega, cn/r0^2 on Gamma", q, -K_proof * omega_mass - far, tol + gap)
    add("proof constant", q, -K_proof * mass, tol + gap)
    add("theorem constant", q, -K_theorem * mass, tol + gap)

    report = FormReport(
        q=q,
        localized=localized,
        remainder=remainder,
        gradient_sum=gradient_sum,
        mass=mass,
        mass_omega=mass_omega,
        mass_gamma=mass_gamma,
        k_hat=float(k_hat),
        constants=constants,
        steps=steps,
    )
    if raise_on_fail and report.violations:
        s = report.violations[0]
        raise ChainViolationError(s.display, s.lhs, s.rhs)
    return report
