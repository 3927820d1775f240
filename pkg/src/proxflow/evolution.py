"""Implicit-Euler (minimizing movement) integration of ``u' + d phi(u) ∋ f``.

Each step solves ``u^{n+1} = (I + tau_n d phi)^{-1}(u^n + tau_n f^{n+1})``
with the forcing sampled at the right endpoint, and stores the subgradient
selection ``g^{n+1} = f^{n+1} - (u^{n+1} - u^n)/tau_n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .prox import DEFAULT_MAX_ITERATIONS, DEFAULT_TOL, ProxProblem, solve_prox
from .space import GridFunction


class StepFailedError(RuntimeError):
    """A prox subproblem failed; carries the step index."""

    def __init__(self, step, cause):
        super().__init__(f"step {step}: {cause}")
        self.step = step
        self.cause = cause


@dataclass(frozen=True)
class TimeMesh:
    """Strictly increasing time nodes ``0 = t_0 < ... < t_N = T``."""

    nodes: np.ndarray
    kind: str = "custom"
    gamma: float = 1.0

    def __post_init__(self):
        t = np.asarray(self.nodes, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("a time mesh needs at least two nodes")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("time nodes must start at 0 and increase strictly")
        t.setflags(write=False)
        object.__setattr__(self, "nodes", t)

    @classmethod
    def uniform(cls, T, N):
        return cls(np.linspace(0.0, T, int(N) + 1), "uniform", 1.0)

    @classmethod
    def graded(cls, T, N, gamma=2.0):
        if gamma < 1:
            raise ValueError("grading exponent must be >= 1")
        n = np.arange(int(N) + 1) / int(N)
        return cls(T * n**gamma, "graded", float(gamma))

    @property
    def steps(self):
        return np.diff(self.nodes)

    @property
    def T(self):
        return float(self.nodes[-1])

    @property
    def N(self):
        return self.nodes.size - 1

    def check_semiconvex(self, omega):
        if omega > 0 and np.max(self.steps) * omega >= 1.0:
            raise ValueError(
                f"largest step {np.max(self.steps):.3g} violates tau * omega < 1 (omega={omega})"
            )

    def __eq__(self, other):
        return isinstance(other, TimeMesh) and np.array_equal(self.nodes, other.nodes)

    def __hash__(self):
        return hash(self.nodes.tobytes())


@dataclass
class Trajectory:
    """Discrete solution on a time mesh.

    ``states``, ``forcings`` have shape ``(N + 1, n)``; ``selections`` has
    shape ``(N, n)`` with row ``k`` holding ``g^{k+1}``, likewise
    ``residuals`` and ``iterations`` hold per-step prox diagnostics.
    """

    energy: object
    mesh: TimeMesh
    states: np.ndarray
    forcings: np.ndarray
    selections: np.ndarray
    energies: np.ndarray
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    tol: float = DEFAULT_TOL
    # True when ``residuals`` already bound the H-norm of the inclusion defect
    residuals_bound_inclusion: bool = False

    @property
    def space(self):
        return self.energy.space

    @property
    def times(self):
        return self.mesh.nodes

    def state(self, n):
        return GridFunction(self.space, self.states[n])

    @property
    def final(self):
        return self.state(-1)

    def norms(self):
        w = self.energy.weights
        return np.sqrt(np.einsum("ij,ij,j->i", self.states, self.states, w))

    def velocities(self):
        return np.diff(self.states, axis=0) / self.mesh.steps[:, None]

    def inclusion_defect(self):
        """Max over steps of ``|| (u^{n+1}-u^n)/tau + g^{n+1} - f^{n+1} ||``."""
        r = self.velocities() + self.selections - self.forcings[1:]
        w = self.energy.weights
        return float(np.sqrt(np.einsum("ij,ij,j->i", r, r, w)).max()) if len(r) else 0.0


def sample_forcing(forcing, mesh, space):
    """Forcing samples of shape ``(N + 1, n)`` at every mesh node.

    ``forcing`` may be ``None`` (zero), an array of samples, a
    :class:`GridFunction` (constant in time) or a callable ``f(t)`` returning
    node values.
    """
    n = space.n
    rows = mesh.nodes.size
    if forcing is None:
        return np.zeros((rows, n))
    if isinstance(forcing, GridFunction):
        return np.tile(forcing.values, (rows, 1))
    if callable(forcing):
        out = np.empty((rows, n))
        for k, t in enumerate(mesh.nodes):
            val = forcing(t)
            out[k] = val.values if isinstance(val, GridFunction) else val
        return out
    arr = np.asarray(forcing, dtype=float)
    if arr.shape == (n,):
        return np.tile(arr, (rows, 1))
    if arr.shape != (rows, n):
        raise ValueError(f"forcing samples must have shape {(rows, n)}, got {arr.shape}")
    return arr.copy()


def evolve(phi, u0, forcing=None, mesh=None, tol=DEFAULT_TOL, max_iterations=DEFAULT_MAX_ITERATIONS):
    """Implicit-Euler trajectory for ``u' + d phi(u) ∋ f``, ``u(0) = u0``.

    Parameters
    ----------
    phi : EnergyFunctional
        Energy with ``tau_n * phi.omega < 1`` on every step.
    u0 : GridFunction or array
        Initial state; must have finite energy.
    forcing : None, array, GridFunction or callable
        See :func:`sample_forcing`.  Step ``n -> n+1`` uses ``f(t_{n+1})``.
    mesh : TimeMesh
    tol : float
        Prox tolerance (gradient-mapping norm).

    Raises
    ------
    StepFailedError
        When a prox subproblem fails, annotated with the step index.
    """
    if mesh is None:
        raise ValueError("a time mesh is required")
    mesh.check_semiconvex(phi.omega)
    space = phi.space
    u = np.asarray(u0.values if isinstance(u0, GridFunction) else u0, dtype=float)
    if u.shape != (space.n,):
        raise ValueError("initial state does not match the energy's grid")
    e0 = phi.evaluate(u)
    if not np.isfinite(e0):
        raise ValueError("initial state has infinite energy")
    f = sample_forcing(forcing, mesh, space)
    N = mesh.N
    taus = mesh.steps
    states = np.empty((N + 1, space.n))
    selections = np.empty((N, space.n))
    energies = np.empty(N + 1)
    residuals = np.empty(N)
    iterations = np.empty(N, dtype=int)
    states[0] = u
    energies[0] = e0
    step = None
    for n in range(N):
        tau = taus[n]
        z = states[n] + tau * f[n + 1]
        try:
            res = solve_prox(
                ProxProblem(phi, tau, z, tol=tol, max_iterations=max_iterations, initial_step=step)
            )
        except (RuntimeError, ValueError) as exc:
            raise StepFailedError(n, exc) from exc
        states[n + 1] = res.minimizer.values
        selections[n] = res.selection.values
        energies[n + 1] = phi.evaluate(states[n + 1])
        residuals[n] = res.residual
        iterations[n] = res.iterations
        step = 2.0 * res.step
    return Trajectory(phi, mesh, states, f, selections, energies, residuals, iterations, tol)


def chain_rule_residuals(tr):
    """``phi_w(u^n) - phi_w(u^{n+1}) - (g^{n+1} + omega u^{n+1}, u^n - u^{n+1})`` per step.

    Convexity of the shifted energy makes every entry nonnegative up to the
    prox tolerance.
    """
    phi = tr.energy
    w = phi.weights
    sq = np.einsum("ij,ij,j->i", tr.states, tr.states, w)
    shifted = tr.energies + 0.5 * phi.omega * sq
    if not np.all(np.isfinite(shifted)):
        raise ValueError("trajectory has infinite energy at some node")
    du = tr.states[:-1] - tr.states[1:]
    sel = tr.selections + phi.omega * tr.states[1:]
    pair = np.einsum("ij,ij,j->i", sel, du, w)
    return shifted[:-1] - shifted[1:] - pair


@dataclass
class DissipationReport:
    worst: float
    violations: list

    @property
    def passed(self):
        return not self.violations


def dissipation_check(tr, slack=1e-8):
    """Check ``phi(u^{n+1}) + ||u^{n+1} - u^n||^2/(2 tau_n) <= phi(u^n) + slack``."""
    w = tr.energy.weights
    du = np.diff(tr.states, axis=0)
    kinetic = np.einsum("ij,ij,j->i", du, du, w) / (2.0 * tr.mesh.steps)
    excess = tr.energies[1:] + kinetic - tr.energies[:-1]
    bad = [int(k) for k in np.flatnonzero(excess > slack)]
    return DissipationReport(float(excess.max()) if excess.size else 0.0, bad)
