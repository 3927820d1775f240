"""Dense reference solutions for linear problems.

Matrices are assembled from explicit 1D stencils combined by Kronecker
products, independently of the sparse difference operators used by the
solvers, and propagated with ``scipy.linalg.expm``.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla


def _stiffness_1d(n, h, bc):
    """``sum_e w_e (Du)_e^2`` as a matrix for one axis (ghost zeros for Dirichlet)."""
    K = np.zeros((n, n))
    idx = np.arange(n - 1)
    K[idx, idx] += 1.0 / h
    K[idx + 1, idx + 1] += 1.0 / h
    K[idx, idx + 1] -= 1.0 / h
    K[idx + 1, idx] -= 1.0 / h
    if bc == "dirichlet":
        K[0, 0] += 1.0 / h
        K[-1, -1] += 1.0 / h
    return K


def _mass_1d(n, h):
    m = np.full(n, h)
    m[[0, -1]] = h / 2
    return m


def stiffness_matrix(grid, bc):
    """Dense matrix ``K`` with ``u^T K u = sum_e w_e (Du)_e^2``."""
    if grid.dimension == 1:
        (n,), (h,) = grid.node_counts, grid.spacing
        return _stiffness_1d(n, h, bc)
    (nx, ny), (hx, hy) = grid.node_counts, grid.spacing
    Kx, Ky = _stiffness_1d(nx, hx, bc), _stiffness_1d(ny, hy, bc)
    Mx, My = np.diag(_mass_1d(nx, hx)), np.diag(_mass_1d(ny, hy))
    return np.kron(Kx, My) + np.kron(Mx, Ky)


def mass_vector(grid):
    if grid.dimension == 1:
        return _mass_1d(grid.node_counts[0], grid.spacing[0])
    (nx, ny), (hx, hy) = grid.node_counts, grid.spacing
    return np.kron(_mass_1d(nx, hx), _mass_1d(ny, hy))


def laplacian_matrix(grid, bc="dirichlet"):
    """Weighted discrete Laplacian ``-M^{-1} K``."""
    return -stiffness_matrix(grid, bc) / mass_vector(grid)[:, None]


def heat_solution(grid, u0, T, bc="dirichlet", lam=0.0):
    """``exp(T (Delta_h + lam I)) u0``."""
    A = laplacian_matrix(grid, bc) + lam * np.eye(grid.n)
    return sla.expm(T * A) @ np.asarray(u0, dtype=float)


def schur_complement(grid):
    """Neumann stiffness reduced onto the boundary nodes."""
    K = stiffness_matrix(grid, "neumann")
    B = grid.boundary_indices
    I = np.flatnonzero(~grid.boundary_mask)
    if I.size == 0:
        return K[np.ix_(B, B)]
    return K[np.ix_(B, B)] - K[np.ix_(B, I)] @ np.linalg.solve(K[np.ix_(I, I)], K[np.ix_(I, B)])


def dtn_solution(grid, u0, T, lam=0.0):
    """``exp(T (-W_b^{-1} S + lam I)) u0`` on the boundary nodes."""
    S = schur_complement(grid)
    wb = grid.boundary_weights
    A = -S / wb[:, None] + lam * np.eye(S.shape[0])
    return sla.expm(T * A) @ np.asarray(u0, dtype=float)


def harmonic_extension(grid, u_boundary):
    """Dense solve of the interior Laplace system with given boundary values."""
    K = stiffness_matrix(grid, "neumann")
    B = grid.boundary_indices
    I = np.flatnonzero(~grid.boundary_mask)
    out = np.zeros(grid.n)
    out[B] = u_boundary
    if I.size:
        out[I] = -np.linalg.solve(K[np.ix_(I, I)], K[np.ix_(I, B)] @ np.asarray(u_boundary, dtype=float))
    return out


def relative_error(a, b, weights):
    d = np.asarray(a) - np.asarray(b)
    den = np.sqrt(np.dot(weights, np.asarray(b) ** 2))
    num = np.sqrt(np.dot(weights, d * d))
    return float(num / den) if den > 0 else float(num)
