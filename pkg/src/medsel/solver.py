"""Cyclic coordinate descent on Gram matrices for weighted-L1 objectives.

Solves min_theta  theta' C theta - 2 b' theta + sum_j 2*pen_j |theta_j|,
which is the quadratic expansion of sum_i g_i (y_i - z_i'theta)^2 with
C = Z' diag(g) Z, b = Z' diag(g) y, and pen_j = lambda * w_j / 2.

A non-finite penalty pins the coordinate at exactly zero, as does a zero
diagonal (constant-zero column). Kernels are numba-compiled; callers handle
standardization and back-scaling.
"""

from __future__ import annotations

import numpy as np
from numba import njit

__all__ = ["SolverError", "cd_solve", "cd_path", "MAX_SWEEPS", "CD_TOL"]

MAX_SWEEPS = 100_000
CD_TOL = 1e-8


class SolverError(RuntimeError):
    """Coordinate descent failed to converge within the sweep budget."""


@njit(cache=True)
def _soft(a: float, b: float) -> float:
    if a > b:
        return a - b
    if a < -b:
        return a + b
    return 0.0


@njit(cache=True)
def _cd_kernel(C, b, pen, theta, tol, max_sweeps):
    d = C.shape[0]
    grad = C @ theta  # maintained as C @ theta (covariance updates)
    for sweep in range(max_sweeps):
        delta = 0.0
        for j in range(d):
            cjj = C[j, j]
            if cjj <= 0.0 or not np.isfinite(pen[j]):
                new = 0.0
            else:
                rho = b[j] - (grad[j] - cjj * theta[j])
                new = _soft(rho, pen[j]) / cjj
            change = new - theta[j]
            if change != 0.0:
                for i in range(d):
                    grad[i] += C[i, j] * change
                theta[j] = new
                a = abs(change)
                if a > delta:
                    delta = a
        if delta < tol:
            return sweep + 1
    return -1


def cd_solve(
    C: np.ndarray,
    b: np.ndarray,
    pen: np.ndarray,
    theta0: np.ndarray | None = None,
    tol: float = CD_TOL,
    max_sweeps: int = MAX_SWEEPS,
) -> np.ndarray:
    """Run coordinate descent to convergence; raises SolverError on failure."""
    theta = np.zeros(C.shape[0]) if theta0 is None else np.array(theta0, dtype=np.float64)
    sweeps = _cd_kernel(
        np.ascontiguousarray(C, dtype=np.float64),
        np.ascontiguousarray(b, dtype=np.float64),
        np.ascontiguousarray(pen, dtype=np.float64),
        theta,
        tol,
        max_sweeps,
    )
    if sweeps < 0:
        raise SolverError(
            f"coordinate descent did not converge in {max_sweeps} sweeps "
            f"(dim={C.shape[0]}, max|pen|={np.max(pen[np.isfinite(pen)], initial=0.0):.3g})"
        )
    return theta


@njit(cache=True)
def _cd_path_kernel(C, b, w, lambdas, tol, max_sweeps, out):
    d = C.shape[0]
    theta = np.zeros(d)
    pen = np.empty(d)
    ok = True
    for l_idx in range(lambdas.shape[0]):
        lam = lambdas[l_idx]
        for j in range(d):
            pen[j] = lam * w[j] / 2.0
        sweeps = _cd_kernel(C, b, pen, theta, tol, max_sweeps)
        if sweeps < 0:
            ok = False
        out[l_idx, :] = theta
    return ok


def cd_path(
    C: np.ndarray,
    b: np.ndarray,
    w: np.ndarray,
    lambdas: np.ndarray,
    tol: float = CD_TOL,
    max_sweeps: int = MAX_SWEEPS,
) -> np.ndarray:
    """Warm-started solutions along a decreasing-to-increasing lambda sequence.

    ``lambdas`` is traversed in the order given; each solve warm-starts from
    the previous one. Returns an array of shape (len(lambdas), dim).
    """
    out = np.empty((lambdas.shape[0], C.shape[0]))
    w = np.asarray(w, dtype=np.float64)
    ok = _cd_path_kernel(
        np.ascontiguousarray(C, dtype=np.float64),
        np.ascontiguousarray(b, dtype=np.float64),
        np.ascontiguousarray(w),
        np.ascontiguousarray(lambdas, dtype=np.float64),
        tol,
        max_sweeps,
        out,
    )
    if not ok:
        raise SolverError("coordinate descent path failed to converge")
    return out
