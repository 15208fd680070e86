"""Smallest eigenpair of a sparse symmetric matrix by shifted inverse iteration."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pyamg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import LinearSolverError, SolverError

log = logging.getLogger(__name__)


@dataclass
class Eigenpair:
    value: float
    vector: np.ndarray
    iterations: int
    residual: float
    positive: bool


def _solver(mat: sp.csr_matrix, rtol: float):
    # local weighting avoids pyamg's randomly started spectral-radius estimate
    ml = pyamg.smoothed_aggregation_solver(
        mat, symmetry="symmetric", max_coarse=500, smooth=("jacobi", {"weighting": "local"})
    )
    prec = ml.aspreconditioner(cycle="V")

    def solve(b: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
        x, info = spla.cg(mat, b, x0=x0, rtol=rtol, atol=0.0, M=prec, maxiter=500)
        if info != 0:
            raise LinearSolverError(f"CG did not converge (info={info})")
        return x

    return solve


def smallest_eigenpair(
    mat: sp.csr_matrix,
    lower_bound: float,
    tol: float = 1e-8,
    max_iter: int = 300,
    x0: np.ndarray | None = None,
) -> Eigenpair:
    """Smallest eigenvalue of a symmetric ``mat`` whose spectrum lies above ``lower_bound``.

    The first shift sits below ``lower_bound`` so every inner system is positive
    definite.  Once the residual is small the shift moves up to ``theta - delta``
    with ``delta`` a multiple of the residual norm, which keeps it below the
    target eigenvalue while accelerating convergence.
    """
    size = mat.shape[0]
    mat = sp.csr_matrix(mat)
    ident = sp.identity(size, format="csr")
    x = np.ones(size) if x0 is None else np.asarray(x0, dtype=float).copy()
    x /= np.linalg.norm(x)
    shift = float(lower_bound)
    solve = _solver(mat - shift * ident, 1e-12)
    theta, res = np.inf, np.inf
    for it in range(1, max_iter + 1):
        y = solve(x, x)
        x = y / np.linalg.norm(y)
        ax = mat @ x
        theta = float(x @ ax)
        res = float(np.linalg.norm(ax - theta * x))
        if res < tol:
            break
        # Kato-type safety: the gap to the shift must stay well above the residual.
        delta = max(10.0 * res, 1e-6 * (abs(theta) + 1.0))
        if res < 1e-2 * (theta - shift) and theta - delta > shift + 0.1 * (theta - shift):
            shift = theta - delta
            solve = _solver(mat - shift * ident, 1e-12)
    else:
        raise SolverError(f"inverse iteration did not converge: residual {res:.3e} after {max_iter} steps")
    if x.sum() < 0:
        x = -x
    positive = bool(np.all(x > 0))
    log.debug("eigenpair: theta=%.12g res=%.3e its=%d positive=%s", theta, res, it, positive)
    return Eigenpair(theta, x, it, res, positive)
