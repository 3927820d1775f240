import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from proxflow.space import (
    EdgeField,
    Grid,
    GridFunction,
    GridMismatchError,
    divergence,
    edge_inner_product,
    gradient,
    grid_function_from_csv,
    grid_function_to_csv,
    inner_product,
    norm,
)

grids = st.one_of(
    st.builds(Grid.interval, st.floats(0.5, 3.0), st.integers(2, 40)),
    st.builds(Grid.rectangle, st.floats(0.5, 2.0), st.floats(0.5, 2.0), st.integers(2, 12), st.integers(2, 12)),
)


@given(grids)
def test_weights_positive_and_sum_to_measure(g):
    assert np.all(g.weights > 0)
    assert g.weights.sum() == pytest.approx(g.measure, rel=1e-12)
    assert np.all(g.boundary_weights > 0)
    assert g.boundary_weights.sum() == pytest.approx(g.boundary_measure, rel=1e-12)


@given(grids)
def test_quadrature_integrates_x_exactly(g):
    x = g.coordinates[:, 0]
    exact = g.extents[0] ** 2 / 2 * g.measure / g.extents[0]
    assert np.dot(g.weights, x) == pytest.approx(exact, rel=1e-12)


def test_boundary_mask_marks_geometric_boundary():
    g = Grid.rectangle(1.0, 2.0, 5, 7)
    x, y = g.coordinates.T
    geometric = np.isclose(x, 0) | np.isclose(x, 1) | np.isclose(y, 0) | np.isclose(y, 2)
    assert np.array_equal(g.boundary_mask, geometric)
    line = Grid.interval(1.0, 9)
    assert list(line.boundary_indices) == [0, 8]


def test_inner_product_examples():
    g = Grid.interval(1.0, 64)
    one = g.constant(1.0)
    assert inner_product(one, one) == pytest.approx(1.0, abs=1e-12)
    u = g.function(np.random.default_rng(0).normal(size=g.n))
    assert inner_product(u, g.zeros()) == 0.0
    g256 = Grid.interval(1.0, 256)
    s = g256.interpolate(lambda x: np.sin(np.pi * x))
    assert inner_product(s, s) == pytest.approx(0.5, abs=1e-3)


def test_norm_examples():
    g = Grid.interval(2.5, 17)
    assert norm(g.zeros()) == 0.0
    assert norm(g.constant(-3.0)) == pytest.approx(3.0 * np.sqrt(2.5), rel=1e-12)


@given(st.integers(0, 2**31 - 1))
def test_triangle_inequality(seed):
    g = Grid.rectangle(1.0, 1.0, 6, 5)
    r = np.random.default_rng(seed)
    u, v = g.function(r.normal(size=g.n)), g.function(r.normal(size=g.n))
    assert norm(u + v) <= norm(u) + norm(v) + 1e-12


def test_inner_product_grid_mismatch():
    with pytest.raises(GridMismatchError):
        inner_product(Grid.interval(1, 5).zeros(), Grid.interval(1, 6).zeros())


def test_gradient_examples():
    g = Grid.interval(1.0, 33)
    assert np.all(gradient(g.constant(2.0), "neumann").values == 0)
    ramp = gradient(g.interpolate(lambda x: x), "neumann")
    assert np.allclose(ramp.values, 1.0, atol=1e-12)
    assert ramp.values.size == 32


def test_dirichlet_gradient_includes_ghost_edges():
    g = Grid.interval(1.0, 5)
    q = gradient(g.constant(1.0), "dirichlet")
    assert q.values.size == 4 + 2
    assert np.count_nonzero(q.values) == 2


@pytest.mark.parametrize("bc", ["dirichlet", "neumann"])
@pytest.mark.parametrize("grid", [Grid.interval(1.3, 21), Grid.rectangle(1.0, 0.7, 9, 6)])
def test_divergence_is_negative_adjoint(grid, bc, rng):
    for _ in range(5):
        u = grid.function(rng.normal(size=grid.n))
        D = grid.difference_matrix(bc)
        q = EdgeField(grid, bc, rng.normal(size=D.shape[0]))
        lhs = edge_inner_product(gradient(u, bc), q)
        rhs = -inner_product(u, divergence(q))
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_divergence_trivial_cases():
    g = Grid.interval(1.0, 11)
    zero = EdgeField(g, "neumann", np.zeros(10))
    assert np.all(divergence(zero).values == 0)
    const = EdgeField(g, "neumann", np.full(10, 3.0))
    assert np.allclose(divergence(const).values[1:-1], 0.0, atol=1e-12)


def test_grid_function_validation():
    g = Grid.interval(1.0, 4)
    with pytest.raises(ValueError):
        GridFunction(g, [1.0, 2.0])
    with pytest.raises(ValueError):
        GridFunction(g, [1.0, np.nan, 0.0, 0.0])
    u = g.function([1.0, 2.0, 3.0, 4.0])
    with pytest.raises(ValueError):
        u.values[0] = 5.0


def test_grid_rejects_bad_shapes():
    with pytest.raises(ValueError):
        Grid((1.0,), (1,))
    with pytest.raises(ValueError):
        Grid((1.0, 1.0, 1.0), (3, 3, 3))
    with pytest.raises(ValueError):
        Grid((-1.0,), (3,))


def test_csv_round_trip():
    g = Grid.rectangle(1.0, 1.0, 4, 3)
    u = g.function(np.arange(12) / 7.0)
    text = grid_function_to_csv(u)
    assert text.startswith("# proxflow grid function v1\nnode,x,y,value\n")
    back = grid_function_from_csv(text, g)
    assert np.array_equal(back.values, u.values)
