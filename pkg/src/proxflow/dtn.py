"""Trace reduction of the p-Dirichlet energy and the boundary (DtN) flow.

The state space is L2 of the boundary with boundary quadrature weights.
The reduced energy of boundary data ``u`` is the p-Dirichlet energy (no
boundary condition) of its p-harmonic extension, i.e. the infimum over all
grid functions with trace ``u``.  A time step of the boundary flow is one
joint minimization over interior and boundary values of

    (1/p) sum_e w_e |D u_hat|^p + ||Tr u_hat - z||^2_boundary / (2 tau).
"""

from __future__ import annotations

from functools import cached_property

import warnings

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .energy import GraphSpec, edge_flux, flux_derivative
from .evolution import Trajectory, sample_forcing
from .fixedpoint import PicardConfig, growth_monitor, picard
from .prox import DEFAULT_TOL
from .space import GridFunction, GridMismatchError


class ExtensionNotConvergedError(RuntimeError):
    pass


class TraceSpace:
    """L2 of the boundary nodes of ``grid``."""

    def __init__(self, grid):
        self.grid = grid
        self.indices = grid.boundary_indices
        self.weights = grid.boundary_weights
        self.coordinates = grid.coordinates[self.indices]
        self.n = self.indices.size

    def __eq__(self, other):
        return isinstance(other, TraceSpace) and other.grid == self.grid

    def __hash__(self):
        return hash(("trace", self.grid))

    def __repr__(self):
        return f"TraceSpace({self.grid!r})"

    @property
    def measure(self):
        return float(self.weights.sum())

    @cached_property
    def interior(self):
        return np.flatnonzero(~self.grid.boundary_mask)

    def function(self, values):
        return BoundaryFunction(self, values)

    def constant(self, c):
        return BoundaryFunction(self, np.full(self.n, float(c)))


class BoundaryFunction(GridFunction):
    """Node values on the boundary; ``grid`` is the :class:`TraceSpace`."""

    @property
    def space(self):
        return self.grid


def trace(u_hat):
    """Restriction of a grid function to the boundary nodes."""
    space = TraceSpace(u_hat.grid)
    return BoundaryFunction(space, u_hat.values[space.indices])


class _Dirichlet:
    """``(1/p) sum_e w_e ((Du)^2 + eps^2)^{p/2}`` without boundary edges."""

    def __init__(self, grid, p, eps):
        if p <= 1:
            raise ValueError("p must exceed 1")
        if p < 2 and eps == 0:
            eps = 1e-8
        self.grid, self.p, self.eps = grid, float(p), float(eps)
        self.D = grid.difference_matrix("neumann").tocsr()
        self.DT = self.D.T.tocsr()
        self.we = grid.edge_weights("neumann")

    def value(self, u):
        d = self.D @ u
        if self.eps == 0:
            dens = np.abs(d) ** self.p
        else:
            dens = (d * d + self.eps**2) ** (0.5 * self.p) - self.eps**self.p
        return float(np.dot(self.we, dens)) / self.p

    def grad(self, u):
        return self.DT @ (self.we * edge_flux(self.D @ u, self.p, self.eps))

    def hess(self, u):
        c = flux_derivative(self.D @ u, self.p, self.eps)
        return (self.DT @ sp.diags(self.we * c) @ self.D).tocsc()

    @property
    def quadratic(self):
        return self.p == 2 and self.eps == 0


def _newton(value, grad, hess, x0, free, metric, tol, max_iterations=200, quadratic=False):
    """Damped Newton on the free coordinates with a Levenberg safeguard.

    Convergence is measured as ``sqrt(sum grad_i^2 / metric_i)`` over the
    free coordinates.
    """
    x = x0.copy()
    fx = value(x)
    for it in range(max_iterations):
        g = grad(x)[free]
        res = float(np.sqrt(np.sum(g * g / metric)))
        if res <= tol:
            return x, res, it
        H = hess(x)
        if not callable(H):
            H = H[free][:, free]
        mu = 0.0
        for _ in range(60):
            try:
                if callable(H):
                    step = H(-g)
                else:
                    A = H if mu == 0 else H + sp.diags(mu * metric)
                    with warnings.catch_warnings():
                        warnings.simplefilter("error", spla.MatrixRankWarning)
                        step = spla.spsolve(A.tocsc(), -g)
                if not np.all(np.isfinite(step)):
                    raise np.linalg.LinAlgError
            except (RuntimeError, np.linalg.LinAlgError, spla.MatrixRankWarning):
                mu = max(10 * mu, 1e-8)
                continue
            t = 1.0
            accepted = False
            slope = float(np.dot(g, step))
            for _ in range(50):
                xn = x.copy()
                xn[free] += t * step
                fn = value(xn)
                if fn <= fx + 1e-4 * t * slope or (quadratic and t == 1.0):
                    accepted = True
                    break
                t *= 0.5
            if accepted:
                break
            mu = max(10 * mu, 1e-8)
        else:
            raise ExtensionNotConvergedError("Newton line search failed")
        if not accepted:
            raise ExtensionNotConvergedError("Newton line search failed")
        if fn >= fx and abs(fn - fx) <= 1e-16 * max(1.0, abs(fx)) and t < 1:
            # no further progress possible in floating point
            x, fx = xn, fn
            g = grad(x)[free]
            return x, float(np.sqrt(np.sum(g * g / metric))), it + 1
        x, fx = xn, fn
    g = grad(x)[free]
    res = float(np.sqrt(np.sum(g * g / metric)))
    if res <= tol:
        return x, res, max_iterations
    raise ExtensionNotConvergedError(f"Newton did not converge (residual {res:.3e})")


def p_harmonic_extension(u, p=2.0, eps=0.0, tol=1e-10, initial=None):
    """Minimize the p-Dirichlet energy over interior values with trace ``u``."""
    space = u.grid
    grid = space.grid
    energy = _Dirichlet(grid, p, eps)
    x0 = np.zeros(grid.n) if initial is None else np.array(getattr(initial, "values", initial), dtype=float)
    if initial is None:
        x0[space.interior] = float(np.dot(space.weights, u.values) / space.measure)
    x0[space.indices] = u.values
    free = space.interior
    if free.size == 0:
        return GridFunction(grid, x0)
    x, _, _ = _newton(
        energy.value,
        energy.grad,
        energy.hess,
        x0,
        free,
        grid.weights[free],
        tol,
        quadratic=energy.quadratic,
    )
    return GridFunction(grid, x)


def reduced_energy(u, p=2.0, eps=0.0, tol=1e-10):
    """p-Dirichlet energy of the p-harmonic extension of ``u``."""
    ext = p_harmonic_extension(u, p, eps, tol)
    return _Dirichlet(u.grid.grid, p, eps).value(ext.values)


class ReducedEnergy:
    """The trace-reduced energy as a functional on the boundary space.

    Exposes the members used by :func:`~proxflow.prox.solve_prox` so the
    boundary flow can also be driven through the generic resolvent.  The
    gradient is the discrete Dirichlet-to-Neumann map: the boundary
    partial derivatives of the extension's energy divided by the boundary
    weights.
    """

    omega = 0.0
    graph = GraphSpec()

    def __init__(self, space, p=2.0, eps=0.0, tol=1e-12):
        self.space = space
        self.p, self.eps, self.tol = float(p), float(eps), tol
        self._dirichlet = _Dirichlet(space.grid, p, eps)
        self._last = None

    @property
    def weights(self):
        return self.space.weights

    def extension(self, u):
        u = np.asarray(getattr(u, "values", u), dtype=float)
        ext = p_harmonic_extension(BoundaryFunction(self.space, u), self.p, self.eps, self.tol, self._last)
        self._last = ext.values
        return ext.values

    def smooth_value_and_gradient(self, u):
        x = self.extension(u)
        g = self._dirichlet.grad(x)[self.space.indices] / self.space.weights
        return self._dirichlet.value(x), g

    def smooth_value(self, u):
        return self.smooth_value_and_gradient(u)[0]

    def smooth_gradient_values(self, u):
        return self.smooth_value_and_gradient(u)[1]

    def evaluate(self, u):
        return self.smooth_value(u)

    __call__ = evaluate

    def evaluate_shifted(self, u):
        return self.evaluate(u)

    def inclusion_residual(self, u, g):
        return np.abs(np.asarray(getattr(g, "values", g)) - self.smooth_gradient_values(u))


def _step_solver(space, p, eps, tol):
    grid = space.grid
    energy = _Dirichlet(grid, p, eps)
    bidx = space.indices
    wb = space.weights
    everything = np.arange(grid.n)
    metric = grid.weights.copy()
    metric[bidx] = wb
    cache = {}

    def solve(x0, z, tau):
        def value(x):
            r = x[bidx] - z
            return energy.value(x) + 0.5 / tau * float(np.dot(wb, r * r))

        def grad(x):
            g = energy.grad(x)
            g[bidx] += wb * (x[bidx] - z) / tau
            return g

        def hess(x):
            if energy.quadratic and tau in cache:
                return cache[tau]
            pen = np.zeros(grid.n)
            pen[bidx] = wb / tau
            H = (energy.hess(x) + sp.diags(pen)).tocsc()
            if energy.quadratic:
                H = cache[tau] = spla.factorized(H)
            return H

        x, res, it = _newton(value, grad, hess, x0, everything, metric, tol, quadratic=energy.quadratic)
        return x, res, it, energy.value(x)

    return solve


def evolve_dtn(p, u0, G=None, mesh=None, eps=0.0, tol=DEFAULT_TOL, cfg=None, forcing=None):
    """Implicit-Euler flow of the Dirichlet-to-Neumann operator on the boundary.

    Parameters
    ----------
    p : float
    u0 : BoundaryFunction
    G : NemytskiiSpec or None
        Perturbation on the boundary; ``None`` or a zero integrand skips
        the Picard loop.
    mesh : TimeMesh
    eps : float
        p-Dirichlet regularization.
    tol : float
        Inner Newton tolerance.
    cfg : PicardConfig
    forcing : optional fixed forcing (used when ``G`` is ``None``).

    Returns
    -------
    (Trajectory, FixedPointReport or None)
        The trajectory lives on the trace space; its ``energy`` is a
        :class:`ReducedEnergy`.
    """
    space = u0.grid
    if not isinstance(space, TraceSpace):
        raise GridMismatchError("evolve_dtn needs boundary data")
    solver = _step_solver(space, p, eps, tol)
    reduced = ReducedEnergy(space, p, eps, min(tol, 1e-12))
    ext0 = p_harmonic_extension(u0, p, eps, min(tol, 1e-12))
    e0 = _Dirichlet(space.grid, p, eps).value(ext0.values)

    def run(forcing_samples):
        f = sample_forcing(forcing_samples, mesh, space)
        N = mesh.N
        states = np.empty((N + 1, space.n))
        sel = np.empty((N, space.n))
        energies = np.empty(N + 1)
        residuals = np.empty(N)
        iterations = np.empty(N, dtype=int)
        states[0] = u0.values
        energies[0] = e0
        x = ext0.values.copy()
        for n, tau in enumerate(mesh.steps):
            z = states[n] + tau * f[n + 1]
            x, res, it, en = solver(x, z, tau)
            states[n + 1] = x[space.indices]
            sel[n] = (z - states[n + 1]) / tau
            energies[n + 1] = en
            residuals[n] = res
            iterations[n] = it
        return Trajectory(reduced, mesh, states, f, sel, energies, residuals, iterations, tol, True)

    if G is None or G.is_zero:
        return run(forcing), None
    cfg = cfg or PicardConfig()
    tr, report = picard(run, G, u0.values, mesh, space, cfg)
    report.growth_ratio = growth_monitor(tr, G.L, G.b_samples(mesh.nodes, space.coordinates), 0.0)
    return tr, report


def trace_bound_constant(grid, p=2.0, samples=50, rng=None):
    """Empirical ``max ||Tr u|| / (||u|| + E(u)^{1/p})`` over random grid functions."""
    rng = np.random.default_rng(0) if rng is None else rng
    space = TraceSpace(grid)
    energy = _Dirichlet(grid, p, 0.0)
    worst = 0.0
    for _ in range(samples):
        u = rng.normal(size=grid.n)
        tr = u[space.indices]
        lhs = np.sqrt(np.dot(space.weights, tr * tr))
        rhs = np.sqrt(np.dot(grid.weights, u * u)) + energy.value(u) ** (1.0 / p)
        worst = max(worst, lhs / rhs)
    return worst
