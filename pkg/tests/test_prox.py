import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from proxflow import oracles
from proxflow.energy import EnergyFunctional, GraphSpec, LowerOrderSpec
from proxflow.prox import (
    NonconvexSubproblemError,
    ProxNotConvergedError,
    ProxProblem,
    scalar_resolvent,
    solve_prox,
    subgradient_defect,
)
from proxflow.space import Grid

LINE = Grid.interval(1.0, 32)


def grid_search_resolvent(graph, tau, z, half_width=None, step=1e-6):
    """Minimize j(v) + (v - z)^2 / (2 tau) over a uniform mesh."""
    lo, hi = min(z, 0.0) - 1.0, max(z, 0.0) + 1.0
    v = np.arange(lo, hi + step, step)
    obj = graph.j(v) + (v - z) ** 2 / (2 * tau)
    return v[np.argmin(obj)]


def test_scalar_resolvent_examples():
    assert scalar_resolvent(GraphSpec(), 0.3, 3.7) == 3.7
    absval = GraphSpec("absolute_value")
    assert scalar_resolvent(absval, 1.0, 2.0) == 1.0
    assert scalar_resolvent(absval, 1.0, 0.5) == 0.0
    assert scalar_resolvent(GraphSpec.indicator(0.0, 1.0), 0.1, -3.0) == 0.0
    assert grid_search_resolvent(absval, 1.0, 2.0) == pytest.approx(1.0, abs=1e-6)
    assert grid_search_resolvent(absval, 1.0, 0.5) == pytest.approx(0.0, abs=1e-6)
    with pytest.raises(ValueError):
        scalar_resolvent(absval, 0.0, 1.0)


@pytest.mark.parametrize(
    "graph",
    [
        GraphSpec.power_law(3.0),
        GraphSpec.power_law(1.5),
        GraphSpec("positive_part"),
        GraphSpec.custom([-1.0, 0.0, 1.0], [-1.0, 0.0, 3.0], [(0.0, 1.0), (0.5, 0.25)]),
    ],
    ids=["power3", "power1.5", "positive_part", "custom"],
)
@given(st.floats(0.01, 3.0), st.floats(-4.0, 4.0))
def test_scalar_resolvent_matches_grid_search(graph, tau, z):
    v = scalar_resolvent(graph, tau, z)
    # v + tau beta(v) must straddle z on a tiny bracket around v; a check in
    # beta-space would fail for graphs that are not Lipschitz at 0
    delta = 1e-12 * (1.0 + abs(v))
    left = v - delta + tau * graph.beta_interval(np.array([v - delta]))[0][0]
    right = v + delta + tau * graph.beta_interval(np.array([v + delta]))[1][0]
    assert left <= z <= right
    assert abs(v - grid_search_resolvent(graph, tau, z, step=1e-4)) <= 2e-4


def test_zero_energy_prox_is_identity():
    phi = EnergyFunctional.zero(LINE)
    z = np.random.default_rng(0).normal(size=LINE.n)
    res = solve_prox(ProxProblem(phi, 0.1, z))
    assert np.array_equal(res.minimizer.values, z)
    assert np.all(res.selection.values == 0.0)


def test_heat_prox_matches_dense_solve():
    g = Grid.interval(1.0, 64)
    phi = EnergyFunctional(g, p=2.0)
    z = np.random.default_rng(1).normal(size=g.n)
    res = solve_prox(ProxProblem(phi, 0.01, z))
    A = np.eye(g.n) - 0.01 * oracles.laplacian_matrix(g, "dirichlet")
    ref = np.linalg.solve(A, z)
    assert np.abs(res.minimizer.values - ref).max() < 1e-8


def test_absolute_value_only_is_soft_threshold():
    phi = EnergyFunctional(LINE, p=None, graph=GraphSpec("absolute_value"))
    z = np.random.default_rng(2).normal(size=LINE.n)
    res = solve_prox(ProxProblem(phi, 0.4, z))
    assert np.array_equal(res.minimizer.values, scalar_resolvent(phi.graph, 0.4, z))


# anchors of unit size put p != 2 energies into the rounding floor of the
# gradient-mapping residual; the suite works with smoother data than that
ANCHOR_SCALE = 0.3

# (energy, largest tau): forward-backward needs about tau * L iterations per
# decade, and L grows like |Du|^(p-2) / h^2 on rough data
CONVEX = [
    (EnergyFunctional(LINE, p=2.0), 0.05),
    (EnergyFunctional(LINE, p=3.0, bc="neumann"), 2e-3),
    (EnergyFunctional(LINE, p=2.0, graph=GraphSpec.indicator(-0.3, 0.4)), 0.05),
    (EnergyFunctional(LINE, p=2.0, graph=GraphSpec("absolute_value")), 0.05),
    (EnergyFunctional(LINE, p=1.5, graph=GraphSpec.power_law(3.0)), 1e-3),
    (EnergyFunctional(LINE, p=None, graph=GraphSpec.custom([-1.0, 1.0], [-1.0, 1.0], [(0.0, 0.5)])), 0.5),
]
SEMICONVEX = [
    (EnergyFunctional(LINE, p=2.0, lower_order=LowerOrderSpec("sine", 3.0)), 0.05),
    (EnergyFunctional(LINE, p=2.0, quadratic=-2.0), 0.05),
]


def _ids(case):
    phi, _ = case
    return f"p{phi.p}-{phi.graph.kind}-{phi.lower_order.name if phi.lower_order else phi.quadratic}"


def _pair(phi, tau, seed):
    r = np.random.default_rng(seed)
    z1, z2 = ANCHOR_SCALE * r.normal(size=(2, LINE.n))
    v1 = solve_prox(ProxProblem(phi, tau, z1)).minimizer.values
    v2 = solve_prox(ProxProblem(phi, tau, z2)).minimizer.values
    w = LINE.weights
    return np.sqrt(np.dot(w, (v1 - v2) ** 2)), np.sqrt(np.dot(w, (z1 - z2) ** 2))


@pytest.mark.parametrize("case", CONVEX, ids=_ids)
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 1.0))
def test_nonexpansive(case, seed, frac):
    phi, tau_max = case
    dv, dz = _pair(phi, frac * tau_max, seed)
    assert dv <= dz + 2e-10


@pytest.mark.parametrize("case", SEMICONVEX, ids=_ids)
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 1.0))
def test_semiconvex_lipschitz_bound(case, seed, frac):
    phi, tau_max = case
    tau = frac * tau_max
    dv, dz = _pair(phi, tau, seed)
    assert dv <= dz / (1 - tau * phi.omega) + 2e-10


@pytest.mark.parametrize("case", CONVEX + SEMICONVEX, ids=_ids)
def test_objective_history_nonincreasing(case):
    phi, tau = case
    z = ANCHOR_SCALE * np.random.default_rng(3).normal(size=LINE.n)
    res = solve_prox(ProxProblem(phi, tau, z), record_history=True)
    h = res.history
    assert np.all(np.diff(h) <= 1e-12 * (1 + np.abs(h[:-1]))) or not np.isfinite(h[0])
    assert res.residual <= 1e-10


@pytest.mark.parametrize("case", CONVEX + SEMICONVEX, ids=_ids)
def test_subgradient_certificate_and_normalization(case, rng):
    phi, tau = case
    z = ANCHOR_SCALE * rng.normal(size=LINE.n)
    res = solve_prox(ProxProblem(phi, tau, z))
    v, g = res.minimizer.values, res.selection.values
    dirs = rng.normal(size=(100, LINE.n)) * rng.uniform(1e-3, 1.0, size=(100, 1))
    assert subgradient_defect(phi, v, g, dirs) <= 1e-8
    w = LINE.weights
    assert np.dot(w, (g + phi.omega * v) * v) >= -1e-8 * (1 + np.dot(w, v * v))


def test_nonconvex_subproblem_rejected():
    phi = SEMICONVEX[0][0]
    with pytest.raises(NonconvexSubproblemError):
        solve_prox(ProxProblem(phi, 1.0 / phi.omega, np.zeros(LINE.n)))


def test_iteration_cap_reports_residual():
    phi = EnergyFunctional(Grid.interval(1.0, 128), p=2.0)
    z = np.random.default_rng(4).normal(size=128)
    with pytest.raises(ProxNotConvergedError) as info:
        solve_prox(ProxProblem(phi, 1.0, z, max_iterations=3))
    assert info.value.iterations == 3
    assert info.value.residual > 1e-10


def test_problem_validation():
    phi = CONVEX[0][0]
    with pytest.raises(ValueError):
        ProxProblem(phi, 0.0, np.zeros(LINE.n))
    with pytest.raises(ValueError):
        ProxProblem(phi, 0.1, np.zeros(LINE.n), tol=0.0)
