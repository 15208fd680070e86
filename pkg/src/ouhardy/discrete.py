"""Measure-weighted finite-difference forms on the interior of a grid."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from numpy.polynomial.legendre import leggauss

from .core import Grid, ProblemConfig
from .measure import WeightedGaussianMeasure

# nodes closer than this many spacings to a pole get a refined cell average
NEAR_POLE_CELLS = 2.5
FAR_POINTS = 3
NEAR_SUBCELLS = 8
NEAR_POINTS = 4


def interior_shape(grid: Grid) -> tuple[int, ...]:
    return (grid.points - 2,) * grid.dim


def interior(values: np.ndarray) -> np.ndarray:
    return values[(slice(1, -1),) * values.ndim]


def embed(u: np.ndarray, grid: Grid) -> np.ndarray:
    """Zero-padded full-grid array from interior unknowns (flat or shaped)."""
    out = np.zeros(grid.shape)
    out[(slice(1, -1),) * grid.dim] = np.reshape(u, interior_shape(grid))
    return out


def stiffness(grid: Grid, measure: WeightedGaussianMeasure) -> sp.csr_matrix:
    """Edge form  sum_edges mu(midpoint) h^(N-2) (u_p - u_q)^2  with zero boundary values.

    Approximates the weighted Dirichlet integral to second order; off-diagonal
    entries are nonpositive.
    """
    dim, h = grid.dim, grid.h
    shape = interior_shape(grid)
    size = int(np.prod(shape))
    scale = measure.normalization * h ** (dim - 2)
    inner = [grid.axis(k)[1:-1] for k in range(dim)]
    diag = np.zeros(shape)
    offsets, bands = [], []
    for k in range(dim):
        axes = list(inner)
        axes[k] = inner[k] + h / 2
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        w_plus = scale * measure.weight(pts)
        axes[k] = inner[k] - h / 2
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        w_minus = scale * measure.weight(pts)
        diag += w_plus + w_minus
        stride = int(np.prod(shape[k + 1 :]))
        coupling = -w_plus.copy()
        last = [slice(None)] * dim
        last[k] = -1
        coupling[tuple(last)] = 0.0
        band = coupling.ravel()[: size - stride]
        offsets += [stride, -stride]
        bands += [band, band]
    mat = sp.diags([diag.ravel()] + bands, [0] + offsets, shape=(size, size), format="csr")
    return mat


def edge_weights(grid: Grid, measure: WeightedGaussianMeasure) -> list[np.ndarray]:
    """Per-axis edge weights  mu(midpoint) h^(N-2), halved on the faces of the box."""
    dim, h = grid.dim, grid.h
    out = []
    for k in range(dim):
        axes = [grid.axis(j) for j in range(dim)]
        axes[k] = 0.5 * (axes[k][1:] + axes[k][:-1])
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        w = measure.density(pts) * h ** (dim - 2)
        for j in range(dim):
            if j == k:
                continue
            sl = [slice(None)] * dim
            sl[j] = 0
            w[tuple(sl)] *= 0.5
            sl[j] = -1
            w[tuple(sl)] *= 0.5
        out.append(w)
    return out


def edge_dirichlet(values: np.ndarray, grid: Grid, measure: WeightedGaussianMeasure, weights=None) -> float:
    """Weighted Dirichlet integral of a full-grid field by the midpoint edge rule."""
    if weights is None:
        weights = edge_weights(grid, measure)
    total = 0.0
    for k, w in enumerate(weights):
        diff = np.diff(values, axis=k)
        total += float(np.sum(w * diff * diff))
    return total


def edge_gradient_sum(members: np.ndarray, values: np.ndarray, weights: list[np.ndarray]) -> float:
    """sum_edges w u_p u_q sum_i (J_i(q) - J_i(p))^2, the edge analogue of int sum |grad J_i|^2 u^2."""
    total = 0.0
    for k, w in enumerate(weights):
        lo = [slice(None)] * values.ndim
        hi = [slice(None)] * values.ndim
        lo[k] = slice(None, -1)
        hi[k] = slice(1, None)
        prod = values[tuple(lo)] * values[tuple(hi)]
        jump = np.sum(np.diff(members, axis=k + 1) ** 2, axis=0)
        total += float(np.sum(w * prod * jump))
    return total


def mass(grid: Grid, measure: WeightedGaussianMeasure) -> np.ndarray:
    """Lumped mass  mu(x_p) h^N  at interior nodes, flattened."""
    return (interior(measure.density(grid.nodes)) * grid.cell_volume).ravel()


def capped_potential(x: np.ndarray, cfg: ProblemConfig, k_cut: float | None, absolute: bool = False) -> np.ndarray:
    """min(V, c k_cut), or min(V, k_cut) with ``absolute``; V itself when k_cut is None."""
    p = cfg.poles_array
    v = np.zeros(x.shape[:-1])
    for a in p:
        r2 = np.sum((x - a) ** 2, axis=-1)
        with np.errstate(divide="ignore"):
            v += np.where(r2 > 0, 1.0 / np.where(r2 > 0, r2, 1.0), np.inf)
    v *= cfg.coupling
    if k_cut is not None:
        cap = k_cut if absolute else cfg.coupling * k_cut
        v = np.minimum(v, cap)
    return v


def _cell_offsets(h: float, dim: int, subcells: int, points: int):
    xg, wg = leggauss(points)
    sub = h / subcells
    centers = -h / 2 + sub * (np.arange(subcells) + 0.5)
    x1 = (centers[:, None] + 0.5 * sub * xg[None, :]).ravel()
    w1 = np.tile(wg, subcells) / (2 * subcells)
    grids = np.meshgrid(*([x1] * dim), indexing="ij")
    offs = np.stack(grids, axis=-1).reshape(-1, dim)
    wts = np.ones(1)
    for _ in range(dim):
        wts = np.outer(wts, w1).ravel()
    return offs, wts


def cell_potential(cfg: ProblemConfig, grid: Grid, k_cut: float | None, absolute: bool = False) -> np.ndarray:
    """Average of the (capped) potential over each node's cell  x_p + [-h/2, h/2]^N.

    Tensor Gauss-Legendre points; cells near a pole are split into subcells so
    that the averaged value keeps growing with the cap instead of saturating
    at the largest nodal value.
    """
    dim, h = grid.dim, grid.h
    nodes = grid.nodes.reshape(-1, dim)
    out = np.empty(len(nodes))
    dist = np.min(np.linalg.norm(nodes[:, None, :] - cfg.poles_array[None], axis=-1), axis=1)
    near = dist < NEAR_POLE_CELLS * h
    for mask, subcells, points in ((~near, 1, FAR_POINTS), (near, NEAR_SUBCELLS, NEAR_POINTS)):
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            continue
        offs, wts = _cell_offsets(h, dim, subcells, points)
        chunk = max(1, 2_000_000 // len(offs))
        for s in range(0, idx.size, chunk):
            sel = idx[s : s + chunk]
            pts = nodes[sel][:, None, :] + offs[None]
            out[sel] = capped_potential(pts, cfg, k_cut, absolute) @ wts
    return out.reshape(grid.shape)


def l2_norm(u: np.ndarray, mass_diag: np.ndarray) -> float:
    """Weighted L^2 norm of interior unknowns."""
    u = np.ravel(u)
    return float(np.sqrt(np.sum(mass_diag * u * u)))
