"""Discrete versions of the a priori inequalities, evaluated on trajectories.

Every check returns an :class:`EstimateEntry` whose ``ratio`` is the worst
measured left side divided by the right side, and which passes when
``ratio <= slack``.  Time integrals use the step value at the right end of
each step, ``int_0^T psi dt ~ sum_n tau_n psi(t_{n+1})``, which is the
quadrature under which the implicit scheme satisfies each inequality
exactly (up to solver tolerance).

Besides the analytic bounds there are three solver certificates, each
reported as a ratio to an absolute threshold with slack 1:

``inclusion``
    ``dist(g - grad S(u), beta(u))`` for every stored selection.
``chain_rule``
    Negative part of the convexity identity between consecutive states.
``dissipation``
    Discrete energy dissipation for unforced runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .evolution import chain_rule_residuals

DEFAULT_SLACK = 1.1
INCLUSION_TOL = 1e-6
CHAIN_RULE_TOL = 1e-8
DISSIPATION_TOL = 1e-8


@dataclass(frozen=True)
class EstimateEntry:
    name: str
    ratio: float
    slack: float
    worst_time_index: int = -1

    def __post_init__(self):
        if not self.ratio >= 0:
            raise ValueError(f"{self.name}: ratio must be nonnegative, got {self.ratio}")

    @property
    def passed(self):
        return bool(self.ratio <= self.slack)

    def with_slack(self, slack):
        return EstimateEntry(self.name, self.ratio, float(slack), self.worst_time_index)

    def to_dict(self):
        return {
            "name": self.name,
            "ratio": float(self.ratio),
            "slack": float(self.slack),
            "pass": self.passed,
            "worst_time_index": int(self.worst_time_index),
        }


@dataclass
class EstimateReport:
    entries: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, name):
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def names(self):
        return [e.name for e in self.entries]

    @property
    def passed(self):
        return all(e.passed for e in self.entries)

    def failures(self):
        return [e for e in self.entries if not e.passed]

    def add(self, entry):
        self.entries.append(entry)

    def to_list(self):
        return [e.to_dict() for e in self.entries]

    def to_json(self):
        return json.dumps(self.to_list(), indent=2, sort_keys=True)


def _sq_norms(a, w):
    return np.einsum("ij,ij,j->i", a, a, w)


def _worst(lhs, rhs):
    """Worst ``lhs/rhs`` with ``0/0 = 0``; a positive ``lhs`` over ``0`` is ``inf``."""
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(lhs <= 0, 0.0, lhs / rhs)
    r = np.where(np.isnan(r), np.inf, r)
    k = int(np.argmax(r))
    return float(r[k]), k


def _require(tr):
    if tr is None or tr.states.shape[0] < 2:
        raise ValueError("estimates need a trajectory with at least one step")


def _forcing(tr, f):
    return tr.forcings if f is None else np.asarray(f, dtype=float)


def _omega(tr, omega):
    return tr.energy.omega if omega is None else float(omega)


def check_apriori(tr, f=None, omega=None, slack=DEFAULT_SLACK):
    """``||u(t)|| <= (||u0||^2 + int_0^T ||f||^2)^{1/2} exp((1 + 2 omega) t / 2)`` for ``t > 0``."""
    _require(tr)
    w = tr.energy.weights
    f = _forcing(tr, f)
    om = _omega(tr, omega)
    tau = tr.mesh.steps
    base = float(_sq_norms(tr.states[:1], w)[0] + np.dot(tau, _sq_norms(f[1:], w)))
    rhs = np.sqrt(base) * np.exp(0.5 * (1 + 2 * om) * tr.times[1:])
    ratio, k = _worst(tr.norms()[1:], rhs)
    return EstimateEntry("apriori_bound", ratio, slack, k + 1)


def check_energy_integral(tr, f=None, omega=None, slack=DEFAULT_SLACK):
    """``int phi(u) <= ||f||^2/2 + (1 + omega)/2 ||u||^2 + ||u0||^2/2`` over ``(0, T)``."""
    _require(tr)
    w = tr.energy.weights
    f = _forcing(tr, f)
    om = _omega(tr, omega)
    tau = tr.mesh.steps
    lhs = float(np.dot(tau, tr.energies[1:]))
    rhs = (
        0.5 * np.dot(tau, _sq_norms(f[1:], w))
        + 0.5 * (1 + om) * np.dot(tau, _sq_norms(tr.states[1:], w))
        + 0.5 * _sq_norms(tr.states[:1], w)[0]
    )
    ratio, _ = _worst([lhs], [rhs])
    return EstimateEntry("energy_integral", ratio, slack, tr.mesh.N)


def _phi_integral(tr):
    # left-endpoint rule: summation by parts of the discrete dissipation
    # identity lands exactly on sum tau_n phi(u^n)
    return float(np.dot(tr.mesh.steps, tr.energies[:-1]))


def _weighted_forcing(tr, f):
    w = tr.energy.weights
    return float(np.dot(tr.mesh.steps * tr.times[1:], _sq_norms(f[1:], w)))


def check_smoothing(tr, f=None, slack=DEFAULT_SLACK):
    """``t phi(u(t)) <= int_0^T phi(u) + ||sqrt(t) f||^2 / 2`` at every node ``t > 0``."""
    _require(tr)
    f = _forcing(tr, f)
    rhs = _phi_integral(tr) + 0.5 * _weighted_forcing(tr, f)
    lhs = tr.times[1:] * tr.energies[1:]
    ratio, k = _worst(lhs, np.full(lhs.shape, rhs))
    return EstimateEntry("smoothing", ratio, slack, k + 1)


def check_timeweighted_velocity(tr, f=None, slack=DEFAULT_SLACK):
    """``||sqrt(t) u'||^2 <= 2 int_0^T phi(u) + ||sqrt(t) f||^2``.

    The velocity on step ``n`` is ``(u^{n+1} - u^n)/tau_n``, weighted by
    ``t_{n+1}``.
    """
    _require(tr)
    f = _forcing(tr, f)
    w = tr.energy.weights
    vel = _sq_norms(tr.velocities(), w)
    lhs = float(np.dot(tr.mesh.steps * tr.times[1:], vel))
    rhs = 2.0 * _phi_integral(tr) + _weighted_forcing(tr, f)
    ratio, _ = _worst([lhs], [rhs])
    return EstimateEntry("timeweighted_velocity", ratio, slack, tr.mesh.N)


def contraction_slack(tr):
    grid = getattr(tr.space, "grid", tr.space)
    h = max(grid.spacing)
    return 1.0 + 10.0 * (float(np.max(tr.mesh.steps)) + h)


def check_contraction(tr1, tr2, f1=None, f2=None, omega=None, slack=None):
    """``||u1(t) - u2(t)|| <= e^{omega t}||u1(0) - u2(0)|| + int_0^t e^{omega(t-s)}||f1 - f2|| ds``."""
    _require(tr1)
    _require(tr2)
    if tr1.mesh != tr2.mesh:
        raise ValueError("contraction needs a common time mesh")
    if tr1.space != tr2.space or tr1.energy.omega != tr2.energy.omega:
        raise ValueError("contraction needs a common energy")
    w = tr1.energy.weights
    om = _omega(tr1, omega)
    t = tr1.times
    tau = tr1.mesh.steps
    df = np.sqrt(_sq_norms(_forcing(tr1, f1)[1:] - _forcing(tr2, f2)[1:], w))
    du = np.sqrt(_sq_norms(tr1.states - tr2.states, w))
    rhs = np.empty_like(t)
    for n in range(t.size):
        rhs[n] = np.exp(om * t[n]) * du[0] + np.sum(tau[:n] * np.exp(om * (t[n] - t[1 : n + 1])) * df[:n])
    slack = contraction_slack(tr1) if slack is None else slack
    ratio, k = _worst(du, rhs)
    return EstimateEntry("contraction", ratio, slack, k)


def check_growth(tr, G, omega=None, slack=DEFAULT_SLACK):
    """Growth of a perturbed solution against its a priori exponential bound."""
    from .fixedpoint import growth_monitor

    _require(tr)
    coords = getattr(tr.space, "coordinates", None)
    ratio = growth_monitor(tr, G.L, G.b_samples(tr.times, coords), _omega(tr, omega))
    return EstimateEntry("growth_bound", ratio, slack, -1)


def check_inclusion(tr, tol=INCLUSION_TOL, slack=1.0):
    """Worst H-norm of ``dist(g^{n+1} - grad S(u^{n+1}), beta(u^{n+1}))`` over ``tol``."""
    _require(tr)
    w = tr.energy.weights
    if tr.residuals_bound_inclusion:
        defects = np.asarray(tr.residuals, dtype=float)
    else:
        phi = tr.energy
        defects = np.array(
            [
                np.sqrt(np.dot(w, phi.inclusion_residual(u, g) ** 2))
                for u, g in zip(tr.states[1:], tr.selections)
            ]
        )
    ratio, k = _worst(defects, np.full(defects.shape, tol))
    return EstimateEntry("inclusion", ratio, slack, k + 1)


def check_chain_rule(tr, tol=CHAIN_RULE_TOL, slack=1.0):
    """Convexity of the shifted energy along consecutive states."""
    _require(tr)
    r = chain_rule_residuals(tr)
    scale = 1.0 + np.abs(tr.energies[:-1])
    ratio, k = _worst(np.maximum(-r, 0.0), tol * scale)
    return EstimateEntry("chain_rule", ratio, slack, k + 1)


def check_dissipation(tr, tol=DISSIPATION_TOL, slack=1.0):
    """``phi(u^{n+1}) + ||u^{n+1} - u^n||^2/(2 tau) <= phi(u^n)`` up to ``tol``."""
    _require(tr)
    w = tr.energy.weights
    kinetic = _sq_norms(np.diff(tr.states, axis=0), w) / (2.0 * tr.mesh.steps)
    excess = tr.energies[1:] + kinetic - tr.energies[:-1]
    ratio, k = _worst(np.maximum(excess, 0.0), np.full(excess.shape, tol))
    return EstimateEntry("dissipation", ratio, slack, k + 1)


def oracle_entry(name, computed, reference, weights, tol):
    """Relative H-norm error against an oracle, reported with ``slack = tol``."""
    d = np.asarray(computed, dtype=float) - np.asarray(reference, dtype=float)
    num = np.sqrt(np.dot(weights, d * d))
    den = np.sqrt(np.dot(weights, np.asarray(reference, dtype=float) ** 2))
    err = num / den if den > 0 else num
    return EstimateEntry(name, float(err), float(tol), -1)


SLACK_KEYS = (
    "apriori_bound",
    "energy_integral",
    "smoothing",
    "timeweighted_velocity",
    "contraction",
    "growth_bound",
    "inclusion",
    "chain_rule",
    "dissipation",
)


def full_report(tr, pair=None, G=None, slacks=None, inclusion_tol=INCLUSION_TOL, extra=()):
    """Run every applicable check on a scenario's outputs.

    Parameters
    ----------
    tr : Trajectory
    pair : Trajectory, optional
        A second run on the same energy and mesh for the contraction check.
    G : NemytskiiSpec, optional
        When given, ``tr`` is a perturbed solution: the analytic bounds use
        its effective forcing and the growth bound is added.
    slacks : dict, optional
        Overrides keyed by entry name.
    extra : iterable of EstimateEntry
        Additional entries (e.g. oracle comparisons) appended verbatim.
    """
    if tr is None:
        raise ValueError("full_report needs a trajectory")
    _require(tr)
    slacks = dict(slacks or {})
    unknown = set(slacks) - set(SLACK_KEYS) - {e.name for e in extra}
    if unknown:
        raise ValueError(f"unknown slack override(s): {sorted(unknown)}")

    def s(name, default=DEFAULT_SLACK):
        return float(slacks.get(name, default))

    rep = EstimateReport()
    rep.add(check_apriori(tr, slack=s("apriori_bound")))
    rep.add(check_energy_integral(tr, slack=s("energy_integral")))
    rep.add(check_smoothing(tr, slack=s("smoothing")))
    rep.add(check_timeweighted_velocity(tr, slack=s("timeweighted_velocity")))
    if pair is not None:
        rep.add(check_contraction(tr, pair, slack=slacks.get("contraction")))
    if G is not None:
        rep.add(check_growth(tr, G, slack=s("growth_bound")))
    rep.add(check_inclusion(tr, inclusion_tol, slack=s("inclusion", 1.0)))
    rep.add(check_chain_rule(tr, slack=s("chain_rule", 1.0)))
    if not np.any(tr.forcings):
        rep.add(check_dissipation(tr, slack=s("dissipation", 1.0)))
    for e in extra:
        rep.add(e.with_slack(slacks[e.name]) if e.name in slacks else e)
    return rep


def report_from_json(text):
    return [EstimateEntry(d["name"], d["ratio"], d["slack"], d["worst_time_index"]) for d in json.loads(text)]


__all__ = [
    "EstimateEntry",
    "EstimateReport",
    "check_apriori",
    "check_energy_integral",
    "check_smoothing",
    "check_timeweighted_velocity",
    "check_contraction",
    "check_growth",
    "check_inclusion",
    "check_chain_rule",
    "check_dissipation",
    "contraction_slack",
    "full_report",
    "oracle_entry",
]
