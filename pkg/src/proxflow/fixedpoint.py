"""Picard iteration for ``u' + d phi(u) ∋ G u`` and the growth-bound monitor.

The fixed-point map sends a trajectory ``v`` to the solution of the
unperturbed problem forced by ``G v``.  Whether the iteration converges,
and to which fixed point, depends on the initial guess; seeding different
guesses is how multiple solutions are exposed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .evolution import evolve
from .perturbation import GrowthAudit, apply
from .prox import DEFAULT_TOL
from .space import GridFunction


class PicardNotConvergedError(RuntimeError):
    """Raised only when the caller asks for strict convergence."""


@dataclass(frozen=True)
class PicardConfig:
    """Outer-loop settings.

    ``guess`` is ``"zero"``, ``"frozen"`` (the initial state at all times),
    a float (that constant everywhere) or an array of samples.
    """

    tol: float = 1e-10
    max_iterations: int = 200
    relaxation: float = 1.0
    guess: object = "zero"

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("outer tolerance must be positive")
        if not 0.0 < self.relaxation <= 1.0:
            raise ValueError("relaxation must lie in (0, 1]")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class FixedPointReport:
    distances: list = field(default_factory=list)
    converged: bool = False
    growth_ratio: float = 0.0
    audit: GrowthAudit = field(default_factory=GrowthAudit)

    @property
    def iterations(self):
        return len(self.distances)

    def ratios(self):
        d = np.asarray(self.distances, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return d[1:] / d[:-1]

    def to_dict(self):
        return {
            "distances": [float(d) for d in self.distances],
            "iterations": self.iterations,
            "converged": self.converged,
            "growth_ratio": self.growth_ratio,
            "audit": self.audit.to_dict(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def initial_guess(guess, u0, rows):
    if isinstance(guess, str):
        if guess == "zero":
            return np.zeros((rows, u0.size))
        if guess == "frozen":
            return np.tile(u0, (rows, 1))
        raise ValueError(f"unknown guess {guess!r}")
    arr = np.asarray(guess, dtype=float)
    if arr.ndim == 0:
        return np.full((rows, u0.size), float(arr))
    if arr.shape == (u0.size,):
        return np.tile(arr, (rows, 1))
    if arr.shape != (rows, u0.size):
        raise ValueError("custom guess must have one row per time node")
    return arr.copy()


def picard(step, G, u0, mesh, space, cfg):
    """Generic relaxed Picard loop around ``step(forcing_samples) -> Trajectory``.

    Returns the last trajectory produced by ``step`` and the report.
    """
    times = mesh.nodes
    w = space.weights
    v = initial_guess(cfg.guess, u0, times.size)
    report = FixedPointReport()
    if G.is_zero:
        # the map is constant, so its first image is the fixed point
        return step(np.zeros_like(v)), FixedPointReport([0.0], True)
    tr = None
    theta = cfg.relaxation
    for _ in range(cfg.max_iterations):
        Gv, audit = apply(G, v, times, space)
        report.audit.merge(audit)
        tr = step(Gv)
        new = tr.states if theta == 1.0 else (1.0 - theta) * v + theta * tr.states
        diff = new - v
        d = float(np.sqrt(np.einsum("ij,ij,j->i", diff, diff, w)).max())
        report.distances.append(d)
        v = new
        if d <= cfg.tol:
            report.converged = True
            break
    return tr, report


def solve_perturbed(phi, G, u0, mesh, tol=DEFAULT_TOL, cfg=None, strict=False):
    """Solve ``u' + d phi(u) ∋ G u`` on ``mesh`` by Picard iteration.

    Each outer iterate runs :func:`~proxflow.evolution.evolve` with forcing
    ``G v_k``.  On non-convergence the last iterate is returned with
    ``report.converged = False`` (or an error is raised if ``strict``).
    """
    cfg = cfg or PicardConfig()
    u0v = np.asarray(u0.values if isinstance(u0, GridFunction) else u0, dtype=float)
    tr, report = picard(
        lambda forcing: evolve(phi, u0v, forcing, mesh, tol=tol),
        G,
        u0v,
        mesh,
        phi.space,
        cfg,
    )
    report.growth_ratio = growth_monitor(tr, G.L, G.b_samples(mesh.nodes, phi.space.coordinates), phi.omega)
    if strict and not report.converged:
        raise PicardNotConvergedError(
            f"Picard iteration did not converge: last distance {report.distances[-1]:.3e}"
        )
    return tr, report


def growth_monitor(tr, L, b, omega, u0=None):
    """Worst ratio over ``n >= 1`` of ``||u(t_n)||`` to the a priori growth bound.

    The bound is ``(||u0||^2 + |Omega| ||b||^2_{L2(0,T)})^{1/2}
    exp((2L + 1 + 2 omega) t / 2)`` with ``b`` a constant or one sample per
    mesh node (step ``n -> n+1`` uses ``b(t_{n+1})``).
    """
    w = tr.energy.weights
    times = tr.mesh.nodes
    u0 = tr.states[0] if u0 is None else np.asarray(getattr(u0, "values", u0), dtype=float)
    b = np.broadcast_to(np.asarray(b, dtype=float), times.shape)
    b_sq = float(np.sum(tr.mesh.steps * b[1:] ** 2))
    base = np.sqrt(float(np.dot(w, u0 * u0)) + w.sum() * b_sq)
    norms = tr.norms()
    bound = base * np.exp(0.5 * (2 * L + 1 + 2 * omega) * times)
    # t = 0 holds with equality and carries no information
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(norms[1:] == 0, 0.0, norms[1:] / bound[1:])
    return float(np.max(ratio))


schaefer_monitor = growth_monitor
