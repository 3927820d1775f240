"""Resolvents ``(I + tau d phi)^{-1}`` via forward-backward splitting.

The implicit-Euler subproblem

    minimize  phi(v) + ||v - z||^2 / (2 tau)

is split into the smooth part of ``phi`` plus the proximity term (handled
by a gradient step) and the pointwise convex graph term (handled exactly
by the scalar resolvent at every node).  The step is backtracked until the
descent lemma holds, so the objective never increases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .energy import GraphSpec
from .space import GridFunction

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITERATIONS = 20000
_MIN_STEP = 1e-300
_VALUE_SLACK = 1e-12


class NonconvexSubproblemError(ValueError):
    """``tau * omega >= 1``: the subproblem objective is not strongly convex."""


class ProxNotConvergedError(RuntimeError):
    """The inner iteration hit ``max_iterations``."""

    def __init__(self, message, residual, iterations):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


def scalar_resolvent(graph: GraphSpec, tau, z):
    """Solve ``v + tau * beta(v) ∋ z`` for scalar or array ``z`` (and ``tau``)."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("tau must be positive")
    out = graph.resolvent(tau if tau.ndim else float(tau), np.asarray(z, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ProxProblem:
    """One implicit-Euler subproblem.

    ``anchor`` already contains ``tau * forcing``.  ``energy`` is any object
    exposing ``weights``, ``omega``, ``graph``, ``space`` and
    ``smooth_value_and_gradient`` (an :class:`~proxflow.energy.EnergyFunctional`
    or a reduced trace energy).
    """

    energy: object
    tau: float
    anchor: object
    tol: float = DEFAULT_TOL
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    initial_step: float | None = None

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass
class ProxResult:
    """Minimizer, subgradient selection and solver diagnostics."""

    minimizer: GridFunction
    selection: GridFunction
    residual: float
    iterations: int
    objective: float
    step: float
    history: np.ndarray | None = None


def solve_prox(problem: ProxProblem, record_history=False) -> ProxResult:
    """Forward-backward splitting for the resolvent subproblem.

    Iterates ``v <- R_s(v - s grad F(v))`` where ``F`` is the smooth part of
    the energy plus ``||. - z||^2/(2 tau)`` and ``R_s`` the node-wise scalar
    resolvent of the graph.  Stops when the gradient-mapping norm
    ``||v_{k+1} - v_k|| / s`` drops below ``tol``.

    Raises
    ------
    NonconvexSubproblemError
        If ``tau * omega >= 1``.
    ProxNotConvergedError
        If ``max_iterations`` is reached.
    """
    phi = problem.energy
    tau = float(problem.tau)
    if tau * phi.omega >= 1.0:
        raise NonconvexSubproblemError(
            f"tau * omega = {tau * phi.omega:.3g} >= 1; subproblem is not convex"
        )
    anchor = problem.anchor
    space = anchor.grid if isinstance(anchor, GridFunction) else phi.space
    z = np.asarray(anchor.values if isinstance(anchor, GridFunction) else anchor, dtype=float)
    w = phi.weights
    graph = phi.graph
    smooth = phi.smooth_value_and_gradient
    inv_tau = 1.0 / tau

    def F(v):
        val, grad = smooth(v)
        r = v - z
        return val + 0.5 * inv_tau * np.dot(w, r * r), grad + inv_tau * r

    def J(v):
        if graph.is_trivial:
            return 0.0
        jv = graph.j(v)
        return np.inf if np.isinf(jv).any() else float(np.dot(w, jv))

    s = float(problem.initial_step) if problem.initial_step else tau
    s = min(s, tau)
    v = z.copy() if graph.is_trivial else graph.resolvent(s, z)
    Fv, gv = F(v)
    history = [Fv + J(v)] if record_history else None
    residual = np.inf
    for k in range(1, problem.max_iterations + 1):
        while True:
            vn = v - s * gv
            if not graph.is_trivial:
                vn = graph.resolvent(s, vn)
            d = vn - v
            Fn, gn = F(vn)
            dd = np.dot(w, d * d)
            bound = Fv + np.dot(w, gv * d) + 0.5 * dd / s
            # F differences drown in rounding near the minimizer, the
            # curvature test does not; the value test only needs a loose slack
            curvature = np.dot(w, (gn - gv) * d)
            if curvature <= dd / s and Fn <= bound + _VALUE_SLACK * (abs(Fv) + abs(Fn)):
                break
            s *= 0.5
            if s < _MIN_STEP:
                raise ProxNotConvergedError("step size underflow", residual, k)
        residual = float(np.sqrt(dd)) / s
        v, Fv, gv = vn, Fn, gn
        if record_history:
            history.append(Fv + J(v))
        if residual <= problem.tol:
            break
    else:
        raise ProxNotConvergedError(
            f"prox did not converge in {problem.max_iterations} iterations "
            f"(residual {residual:.3e})",
            residual,
            problem.max_iterations,
        )
    g = (z - v) * inv_tau
    return ProxResult(
        minimizer=GridFunction(space, v),
        selection=GridFunction(space, g),
        residual=residual,
        iterations=k,
        objective=Fv + J(v),
        step=s,
        history=None if history is None else np.asarray(history),
    )


def subgradient_defect(phi, v, g, directions):
    """Worst ``(g + omega v, w) - [phi_w(v + w) - phi_w(v)]`` scaled by ``1 + ||w||``.

    A true subgradient gives values ``<= 0``.  ``directions`` has shape
    ``(m, n)``; ``v`` and ``g`` are node-value arrays.
    """
    w8 = phi.weights
    base = phi.evaluate_shifted(v)
    sel = g + phi.omega * v
    worst = -np.inf
    for d in directions:
        lhs = phi.evaluate_shifted(v + d)
        if np.isinf(lhs):
            continue
        viol = np.dot(w8, sel * d) - (lhs - base)
        worst = max(worst, viol / (1.0 + np.sqrt(np.dot(w8, d * d))))
    return worst
