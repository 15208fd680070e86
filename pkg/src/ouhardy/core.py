"""Problem configuration, grids, sampled fields and tensor quadrature."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

from .errors import (
    ConfigError,
    DefiniteMatrixError,
    DimensionError,
    GeometryError,
    InputError,
    ResolutionError,
)

SYMMETRY_TOL = 1e-12
MIN_POINTS = 8


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ProblemConfig:
    """Dimension, poles, drift matrix and coupling of one problem instance.

    Stored as tuples so instances are hashable; array views are exposed
    through ``poles_array`` and ``a``.
    """

    dimension: int
    poles: tuple[tuple[float, ...], ...]
    matrix_a: tuple[tuple[float, ...], ...]
    coupling: float
    ims_k: float = 4.0

    def __post_init__(self):
        poles = tuple(tuple(float(v) for v in p) for p in self.poles)
        mat = tuple(tuple(float(v) for v in row) for row in self.matrix_a)
        object.__setattr__(self, "poles", poles)
        object.__setattr__(self, "matrix_a", mat)
        object.__setattr__(self, "dimension", int(self.dimension))
        object.__setattr__(self, "coupling", float(self.coupling))
        object.__setattr__(self, "ims_k", float(self.ims_k))
        if len(poles) < 1:
            raise ConfigError("at least one pole is required", "poles")
        for p in poles:
            if len(p) != self.dimension:
                raise ConfigError(f"pole {p} is not a {self.dimension}-vector", "poles")
        if len(mat) != self.dimension or any(len(r) != self.dimension for r in mat):
            raise ConfigError(f"matrix_a must be {self.dimension}x{self.dimension}", "matrix_a")
        if not np.all(np.isfinite(mat)) or not np.all(np.isfinite(poles)):
            raise ConfigError("non-finite entries", "matrix_a")

    @classmethod
    def create(cls, poles, matrix_a=None, coupling: float = 0.25, ims_k: float = 4.0):
        poles = np.atleast_2d(np.asarray(poles, dtype=float))
        dim = poles.shape[1]
        if matrix_a is None:
            matrix_a = np.eye(dim)
        matrix_a = np.asarray(matrix_a, dtype=float)
        if matrix_a.ndim == 1:
            matrix_a = matrix_a.reshape(dim, dim)
        return cls(
            dimension=dim,
            poles=tuple(map(tuple, poles)),
            matrix_a=tuple(map(tuple, matrix_a)),
            coupling=coupling,
            ims_k=ims_k,
        )

    def with_coupling(self, c: float) -> "ProblemConfig":
        return replace(self, coupling=float(c))

    @cached_property
    def poles_array(self) -> np.ndarray:
        return _frozen(np.array(self.poles, dtype=float))

    @cached_property
    def a(self) -> np.ndarray:
        return _frozen(np.array(self.matrix_a, dtype=float))

    @property
    def n(self) -> int:
        return len(self.poles)

    @property
    def c0(self) -> float:
        return optimal_constant(self.dimension)

    @cached_property
    def barycenter(self) -> np.ndarray:
        return _frozen(self.poles_array.mean(axis=0))

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        sym = 0.5 * (self.a + self.a.T)
        return _frozen(np.linalg.eigvalsh(sym))

    @property
    def alpha1(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def alpha2(self) -> float:
        return float(self.eigenvalues[-1])

    @property
    def trace(self) -> float:
        return float(np.trace(self.a))

    @cached_property
    def r0(self) -> float:
        """Half the minimal pole distance (``inf`` for a single pole)."""
        if self.n < 2:
            return math.inf
        p = self.poles_array
        d = np.linalg.norm(p[:, None, :] - p[None, :, :], axis=-1)
        d[np.diag_indices(self.n)] = np.inf
        return float(d.min() / 2)

    def config_hash(self) -> str:
        import hashlib

        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "poles": [list(p) for p in self.poles],
            "matrix_a": [v for row in self.matrix_a for v in row],
            "coupling_c": self.coupling,
            "ims_k": self.ims_k,
        }


def optimal_constant(dim: int) -> float:
    return ((dim - 2) / 2) ** 2


@dataclass
class ValidationReport:
    checks: dict[str, bool]
    messages: dict[str, str]
    c0: float
    r0: float
    trace: float
    alpha1: float
    alpha2: float

    @property
    def ok(self) -> bool:
        return all(self.checks.values())


def validate_config(cfg: ProblemConfig, strict: bool = True) -> ValidationReport:
    """Check the configuration invariants and cache the derived constants.

    With ``strict`` the first failing invariant is raised as its dedicated
    error class; otherwise the report carries pass/fail per invariant.
    """
    checks: dict[str, bool] = {}
    messages: dict[str, str] = {}
    a = cfg.a

    checks["dimension"] = cfg.dimension >= 3
    if not checks["dimension"]:
        messages["dimension"] = f"dimension must be >= 3 (got {cfg.dimension}); c0 degenerates at N=2"

    asym = float(np.max(np.abs(a - a.T)))
    checks["symmetric"] = asym <= SYMMETRY_TOL
    if not checks["symmetric"]:
        messages["symmetric"] = f"matrix_a is not symmetric (max |A - A^T| = {asym:.3e})"
    checks["positive_definite"] = bool(cfg.alpha1 > 0)
    if not checks["positive_definite"]:
        messages["positive_definite"] = f"matrix_a is not positive definite (smallest eigenvalue {cfg.alpha1:.3e})"

    checks["distinct_poles"] = cfg.n < 2 or cfg.r0 > 0
    if not checks["distinct_poles"]:
        messages["distinct_poles"] = "poles must be pairwise distinct"

    checks["coupling"] = cfg.coupling >= 0
    if not checks["coupling"]:
        messages["coupling"] = "coupling_c must be nonnegative"
    checks["ims_k"] = 0 <= cfg.ims_k < math.pi**2
    if not checks["ims_k"]:
        messages["ims_k"] = "ims_k must lie in [0, pi^2)"

    report = ValidationReport(
        checks=checks,
        messages=messages,
        c0=cfg.c0,
        r0=cfg.r0,
        trace=cfg.trace,
        alpha1=cfg.alpha1,
        alpha2=cfg.alpha2,
    )
    if strict:
        errors = {
            "dimension": (DimensionError, "dimension"),
            "symmetric": (DefiniteMatrixError, "matrix_a"),
            "positive_definite": (DefiniteMatrixError, "matrix_a"),
            "distinct_poles": (GeometryError, "poles"),
            "coupling": (ConfigError, "coupling_c"),
            "ims_k": (ConfigError, "ims_k"),
        }
        for name, passed in checks.items():
            if not passed:
                cls, fld = errors[name]
                raise cls(messages[name], fld)
    return report


@dataclass(frozen=True)
class Grid:
    """Tensor lattice on the cube ``center + [-R, R]^N`` with ``points`` nodes per axis."""

    center: tuple[float, ...]
    radius: float
    points: int

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        if self.points < MIN_POINTS:
            raise ResolutionError(f"points_per_axis must be >= {MIN_POINTS} (got {self.points})")
        if not self.radius > 0:
            raise ResolutionError("grid radius must be positive")

    @classmethod
    def for_config(cls, cfg: ProblemConfig, points: int = 64, radius: float | None = None) -> "Grid":
        if radius is None:
            radius = default_radius(cfg)
        grid = cls(tuple(cfg.barycenter), float(radius), int(points))
        grid.check_contains(cfg.poles_array)
        return grid

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def h(self) -> float:
        return 2 * self.radius / (self.points - 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points,) * self.dim

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @cached_property
    def offsets(self) -> np.ndarray:
        return _frozen(np.linspace(-self.radius, self.radius, self.points))

    def axis(self, k: int) -> np.ndarray:
        return self.center[k] + self.offsets

    @cached_property
    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``(*shape, N)``."""
        axes = [self.axis(k) for k in range(self.dim)]
        return _frozen(np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1))

    @cached_property
    def weights_1d(self) -> np.ndarray:
        w = np.full(self.points, self.h)
        w[0] = w[-1] = self.h / 2
        return _frozen(w)

    def refine(self) -> "Grid":
        """Grid with half the spacing on the same box."""
        return replace(self, points=2 * self.points - 1)

    def with_points(self, points: int) -> "Grid":
        return replace(self, points=int(points))

    def contains(self, x: np.ndarray) -> bool:
        x = np.atleast_2d(x)
        return bool(np.all(np.abs(x - np.asarray(self.center)) < self.radius))

    def check_contains(self, poles: np.ndarray) -> None:
        if not self.contains(poles):
            raise GeometryError("every pole must lie strictly inside the grid box", "grid.radius")

    def interior_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[(slice(1, -1),) * self.dim] = True
        return m


def default_radius(cfg: ProblemConfig) -> float:
    spread = float(np.max(np.linalg.norm(cfg.poles_array - cfg.barycenter, axis=1)))
    return 4.0 * max(spread, cfg.alpha1**-0.5)


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray
    singular: bool = False
    exclusion_radius: float | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise InputError(f"field shape {self.values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise InputError("field values must be finite at every node")
        if self.singular and self.exclusion_radius is None:
            raise InputError("a singular field must record its exclusion radius")

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable[[np.ndarray], np.ndarray]) -> "ScalarField":
        return cls(grid, fn(grid.nodes))

    def __mul__(self, other: float) -> "ScalarField":
        return ScalarField(self.grid, self.values * other, self.singular, self.exclusion_radius)

    __rmul__ = __mul__


@dataclass
class VectorField:
    grid: Grid
    values: np.ndarray  # shape (N, *grid.shape)

    def norm2(self) -> np.ndarray:
        return np.sum(self.values**2, axis=0)


def gradient(f: ScalarField) -> VectorField:
    """Central differences inside the box, one-sided on its faces."""
    grid = f.grid
    if grid.points < 3:
        raise ResolutionError("gradient needs at least 3 points per axis")
    comps = np.gradient(f.values, grid.h, edge_order=1)
    if grid.dim == 1:
        comps = [comps]
    return VectorField(grid, np.stack(comps))


def tensor_quadrature(values, grid: Grid) -> float:
    """Trapezoidal tensor-product approximation of the integral over the box."""
    if isinstance(values, ScalarField):
        values = values.values
    if callable(values):
        values = values(grid.nodes)
    v = np.asarray(values, dtype=float)
    if v.shape != grid.shape:
        raise InputError(f"integrand shape {v.shape} does not match grid {grid.shape}")
    w = grid.weights_1d
    for _ in range(grid.dim):
        v = np.tensordot(w, v, axes=(0, 0))
    return float(v)


# -- configuration files -----------------------------------------------------

@dataclass(frozen=True)
class GridSettings:
    radius: float | None = None
    points_per_axis: int = 48


@dataclass(frozen=True)
class QuadratureSettings:
    method: str = "quadrature"
    samples: int = 100_000


@dataclass(frozen=True)
class EvolveSettings:
    dt: float = 1e-3
    t_final: float = 0.5
    cutoff_max: int = 512


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemConfig
    grid: GridSettings = field(default_factory=GridSettings)
    quadrature: QuadratureSettings = field(default_factory=QuadratureSettings)
    evolve: EvolveSettings = field(default_factory=EvolveSettings)

    def make_grid(self, points: int | None = None) -> Grid:
        return Grid.for_config(self.problem, points or self.grid.points_per_axis, self.grid.radius)

    def to_dict(self) -> dict:
        d = self.problem.to_dict()
        d["grid"] = {"radius": self.grid.radius, "points_per_axis": self.grid.points_per_axis}
        d["quadrature"] = {"method": self.quadrature.method, "samples": self.quadrature.samples}
        d["evolve"] = {
            "dt": self.evolve.dt,
            "t_final": self.evolve.t_final,
            "cutoff_max": self.evolve.cutoff_max,
        }
        return d

    def config_hash(self) -> str:
        import hashlib

        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


_TOP_KEYS = {"dimension", "poles", "matrix_a", "coupling_c", "ims_k", "grid", "quadrature", "evolve"}
_SECTION_KEYS = {
    "grid": {"radius", "points_per_axis"},
    "quadrature": {"method", "samples"},
    "evolve": {"dt", "t_final", "cutoff_max"},
}


def parse_config(data: Mapping[str, Any]) -> RunConfig:
    """Build a :class:`RunConfig` from a decoded mapping; unknown keys are rejected."""
    if not isinstance(data, Mapping):
        raise ConfigError("top level must be a mapping")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", sorted(unknown)[0])
    for req in ("dimension", "poles", "coupling_c"):
        if req not in data:
            raise ConfigError("missing required key", req)
    for section, allowed in _SECTION_KEYS.items():
        sub = data.get(section, {})
        if not isinstance(sub, Mapping):
            raise ConfigError("must be a mapping", section)
        bad = set(sub) - allowed
        if bad:
            raise ConfigError(f"unknown keys {sorted(bad)}", f"{section}.{sorted(bad)[0]}")

    dim = data["dimension"]
    if not isinstance(dim, int) or isinstance(dim, bool):
        raise ConfigError("must be an integer", "dimension")
    matrix = data.get("matrix_a")
    if matrix is None:
        matrix = np.eye(dim).ravel().tolist()
    try:
        matrix = np.asarray(matrix, dtype=float).reshape(dim, dim)
    except ValueError:
        raise ConfigError(f"must hold {dim * dim} entries (row-major)", "matrix_a") from None
    try:
        poles = np.asarray(data["poles"], dtype=float)
    except ValueError:
        raise ConfigError("must be a list of N-vectors", "poles") from None
    if poles.ndim != 2 or poles.shape[1] != dim:
        raise ConfigError(f"must be a list of {dim}-vectors", "poles")

    problem = ProblemConfig(
        dimension=dim,
        poles=tuple(map(tuple, poles)),
        matrix_a=tuple(map(tuple, matrix)),
        coupling=float(data["coupling_c"]),
        ims_k=float(data.get("ims_k", 4.0)),
    )
    g = data.get("grid", {})
    q = data.get("quadrature", {})
    e = data.get("evolve", {})
    if q.get("method", "quadrature") not in ("quadrature", "montecarlo"):
        raise ConfigError("must be 'quadrature' or 'montecarlo'", "quadrature.method")
    return RunConfig(
        problem=problem,
        grid=GridSettings(
            radius=None if g.get("radius") is None else float(g["radius"]),
            points_per_axis=int(g.get("points_per_axis", 48)),
        ),
        quadrature=QuadratureSettings(
            method=q.get("method", "quadrature"), samples=int(q.get("samples", 100_000))
        ),
        evolve=EvolveSettings(
            dt=float(e.get("dt", 1e-3)),
            t_final=float(e.get("t_final", 0.5)),
            cutoff_max=int(e.get("cutoff_max", 512)),
        ),
    )


def load_config(path: str | Path) -> RunConfig:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not valid JSON ({exc})") from None
    return parse_config(data)


def s1_config(coupling: float = 0.25, ims_k: float = 4.0) -> ProblemConfig:
    """Two unit-gap poles on the first axis of R^3 with identity drift matrix."""
    return ProblemConfig.create([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]], np.eye(3), coupling, ims_k)
