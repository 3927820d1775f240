import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from proxflow import oracles
from proxflow.energy import (
    EnergyFunctional,
    GraphSpec,
    LowerOrderSpec,
    convexity_defect,
)
from proxflow.scenario import bundled_scenarios, parse_energy, parse_grid
from proxflow.space import Grid, inner_product

LINE = Grid.interval(1.0, 41)
SQUARE = Grid.rectangle(1.0, 1.0, 9, 9)

GRAPHS = [
    GraphSpec(),
    GraphSpec("absolute_value"),
    GraphSpec.indicator(-0.5, 0.75),
    GraphSpec.power_law(3.0),
    GraphSpec("positive_part"),
    GraphSpec.custom([-1.0, 0.0, 2.0], [-2.0, 0.0, 1.0], [(0.5, 0.3)]),
]


def suite_energies():
    out = []
    for path in bundled_scenarios():
        doc = json.loads(path.read_text())
        if doc.get("kind") != "dtn":
            out.append(pytest.param(parse_energy(doc["energy"], parse_grid(doc["grid"])), id=path.stem))
    return out


def smooth_energies():
    return [
        EnergyFunctional(LINE, p=2.0),
        EnergyFunctional(LINE, p=3.0, bc="neumann"),
        EnergyFunctional(LINE, p=1.5),
        EnergyFunctional(SQUARE, p=4.0),
        EnergyFunctional(LINE, p=2.0, lower_order=LowerOrderSpec("sine", 2.0)),
        EnergyFunctional(LINE, p=2.0, lower_order=LowerOrderSpec("atan", 1.0)),
        EnergyFunctional(SQUARE, p=2.0, lower_order=LowerOrderSpec("modulated_sine", 1.0)),
        EnergyFunctional(LINE, p=2.0, quadratic=0.7),
    ]


def test_zero_function_has_zero_energy():
    for phi in smooth_energies():
        assert phi.evaluate(np.zeros(phi.grid.n)) == 0.0
        assert np.all(phi.smooth_gradient_values(np.zeros(phi.grid.n)) == 0.0)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0, 4.0])
def test_ramp_energy_neumann(p):
    phi = EnergyFunctional(LINE, p=p, bc="neumann", eps=0.0 if p >= 2 else 0.0)
    assert phi.evaluate(LINE.coordinates[:, 0]) == pytest.approx(1.0 / p, abs=1e-10)


def test_indicator_violation_is_infinite():
    phi = EnergyFunctional(LINE, p=2.0, graph=GraphSpec.indicator(0.0, 1.0))
    u = np.zeros(LINE.n)
    u[3] = 1.5
    assert phi.evaluate(u) == np.inf
    u[3] = 1.0
    assert np.isfinite(phi.evaluate(u))


def test_p_at_most_one_rejected():
    with pytest.raises(ValueError):
        EnergyFunctional(LINE, p=1.0)


def test_heat_gradient_matches_dense_laplacian():
    g = Grid.interval(1.0, 512)
    phi = EnergyFunctional(g, p=2.0)
    u = np.sin(np.pi * g.coordinates[:, 0])
    grad = phi.smooth_gradient(g.function(u)).values
    dense = -oracles.laplacian_matrix(g, "dirichlet") @ u
    assert np.allclose(grad, dense, rtol=1e-9, atol=1e-8)
    interior = slice(1, -1)
    target = np.pi**2 * u[interior]
    err = np.linalg.norm(grad[interior] - target) / np.linalg.norm(target)
    assert err < 1e-3


@pytest.mark.parametrize("phi", smooth_energies())
def test_gradient_matches_central_differences(phi, rng):
    for _ in range(3):
        u = rng.normal(size=phi.grid.n)
        v = rng.normal(size=phi.grid.n)
        t = 1e-6
        fd = (phi.smooth_value(u + t * v) - phi.smooth_value(u - t * v)) / (2 * t)
        an = np.dot(phi.weights, phi.smooth_gradient_values(u) * v)
        assert an == pytest.approx(fd, rel=1e-5, abs=1e-7)


def test_quadratic_identity_for_p2():
    phi = EnergyFunctional(SQUARE, p=2.0, bc="neumann")
    u = SQUARE.function(np.random.default_rng(3).normal(size=SQUARE.n))
    assert phi.evaluate(u) == pytest.approx(0.5 * inner_product(phi.smooth_gradient(u), u), rel=1e-13)


def test_shifted():
    phi = EnergyFunctional(LINE, p=2.0, lower_order=LowerOrderSpec("sine", 2.0))
    assert phi.shifted(0.0) is phi
    u = np.random.default_rng(4).normal(size=LINE.n)
    psi = phi.shifted(0.5)
    assert psi.evaluate(u) == pytest.approx(phi.evaluate(u) + 0.25 * np.dot(LINE.weights, u * u), rel=1e-13)
    assert psi.omega == pytest.approx(1.5)
    full = phi.shifted(phi.omega)
    assert full.omega == 0.0
    assert convexity_defect(full, np.random.default_rng(5), 64) <= 0.0
    with pytest.raises(ValueError):
        phi.shifted(-1.0)


@pytest.mark.parametrize("phi", suite_energies() + [pytest.param(e, id=f"extra{i}") for i, e in enumerate(smooth_energies())])
def test_shifted_convexity(phi):
    assert convexity_defect(phi, np.random.default_rng(6), 64, scale=2.0) <= 0.0


def test_convexity_probe_detects_understated_shift():
    phi = EnergyFunctional(LINE, p=None, lower_order=LowerOrderSpec("linear", -3.0, lipschitz=0.0))
    assert convexity_defect(phi, np.random.default_rng(7), 64, scale=2.0) > 0.0


def test_omega_bookkeeping():
    phi = EnergyFunctional(LINE, p=2.0, lower_order=LowerOrderSpec("sine", 1.5), quadratic=-0.25)
    assert phi.omega == pytest.approx(1.75)


@pytest.mark.parametrize("name,param", [("linear", -1.3), ("sine", 2.0), ("atan", 0.7), ("modulated_sine", 1.1)])
def test_lower_order_catalog(name, param):
    spec = LowerOrderSpec(name, param)
    x = SQUARE.coordinates
    assert np.all(spec.f1(x, np.zeros(SQUARE.n)) == 0.0)
    assert spec.audit_lipschitz(x, np.random.default_rng(8), n=200) <= 1e-12
    u = np.linspace(-3, 3, SQUARE.n)
    # antiderivative by dense trapezoid as an independent check
    s = np.linspace(0, 1, 20001)
    ref = np.array([np.trapezoid(spec.f1(np.repeat(x[i : i + 1], s.size, 0), ui * s), ui * s) for i, ui in enumerate(u)])
    assert np.allclose(spec.F1(x, u), ref, atol=1e-7)


def test_atan_uses_quadrature():
    spec = LowerOrderSpec("atan", 2.0)
    assert not spec.has_closed_form
    u = np.array([-2.0, 0.0, 0.5, 3.0])
    closed = 2.0 * (u * np.arctan(u) - 0.5 * np.log1p(u * u))
    assert np.allclose(spec.F1(LINE.coordinates[:4], u), closed, atol=1e-13)


@pytest.mark.parametrize("graph", GRAPHS, ids=lambda g: g.kind)
def test_graph_normalization(graph):
    assert graph.j(np.zeros(1))[0] == 0.0
    lo, hi = graph.beta_interval(np.zeros(1))
    assert lo[0] <= 0.0 <= hi[0]
    assert GraphSpec.from_dict(graph.to_dict()) == graph


@pytest.mark.parametrize("graph", GRAPHS, ids=lambda g: g.kind)
@given(st.lists(st.floats(-4, 4), min_size=3, max_size=3), st.floats(0.01, 0.99))
def test_graph_potential_is_convex(graph, pts, theta):
    u, v = pts[0], pts[1]
    ju, jv = graph.j(np.array([u]))[0], graph.j(np.array([v]))[0]
    mid = graph.j(np.array([theta * u + (1 - theta) * v]))[0]
    if np.isfinite(ju) and np.isfinite(jv):
        assert mid <= theta * ju + (1 - theta) * jv + 1e-12 * (1 + abs(ju) + abs(jv))


def test_graph_validation():
    with pytest.raises(ValueError):
        GraphSpec.indicator(0.5, 1.0)
    with pytest.raises(ValueError):
        GraphSpec.power_law(0.5)
    with pytest.raises(ValueError):
        GraphSpec.custom([0.0, 1.0], [1.0, 0.0])
    with pytest.raises(ValueError):
        GraphSpec.custom([0.0, 1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        GraphSpec("bogus")


def test_inclusion_residual_zero_for_exact_selection():
    phi = EnergyFunctional(LINE, p=2.0, graph=GraphSpec("absolute_value"))
    u = np.sin(np.pi * LINE.coordinates[:, 0])
    g = phi.smooth_gradient_values(u) + np.sign(u)
    assert np.all(phi.inclusion_residual(u, g) == 0.0)
    assert phi.inclusion_residual(u, g + 0.5).max() > 0.4
