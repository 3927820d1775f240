"""Discretized domains and the weighted L2 structure on them.

A :class:`Grid` is a uniform tensor mesh on an interval or an axis-aligned
rectangle.  Node values are integrated with trapezoidal weights, and
gradients live on mesh edges as forward differences.  The divergence is
defined as the exact negative adjoint of the gradient with respect to the
node and edge weights, so summation by parts holds to rounding.
"""

from __future__ import annotations

import csv
import io
from functools import cached_property

import numpy as np
import scipy.sparse as sp

BOUNDARY_CONDITIONS = ("dirichlet", "neumann")


class GridMismatchError(ValueError):
    """Raised when two discrete functions do not share a grid."""


def _trapezoid_weights(n, h):
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def _readonly(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


class Grid:
    """Uniform node grid on ``(0, L)`` or ``(0, Lx) x (0, Ly)``.

    Parameters
    ----------
    extents : sequence of float
        Domain length per axis (one or two entries).
    node_counts : sequence of int
        Number of nodes per axis, endpoints included (at least 2).

    Nodes are numbered in C order over the axes, i.e. in 2D node
    ``(i, j)`` has index ``i * ny + j``.
    """

    def __init__(self, extents, node_counts):
        extents = tuple(float(e) for e in np.atleast_1d(extents))
        node_counts = tuple(int(n) for n in np.atleast_1d(node_counts))
        if len(extents) not in (1, 2) or len(extents) != len(node_counts):
            raise ValueError("extents and node_counts must both have length 1 or 2")
        if any(not np.isfinite(e) or e <= 0 for e in extents):
            raise ValueError(f"extents must be positive, got {extents}")
        if any(n < 2 for n in node_counts):
            raise ValueError(f"need at least 2 nodes per axis, got {node_counts}")
        self.extents = extents
        self.node_counts = node_counts
        self.dimension = len(extents)
        self.spacing = tuple(e / (n - 1) for e, n in zip(extents, node_counts))

    @classmethod
    def interval(cls, length=1.0, n=128):
        return cls((length,), (n,))

    @classmethod
    def rectangle(cls, lx=1.0, ly=1.0, nx=33, ny=33):
        return cls((lx, ly), (nx, ny))

    def __repr__(self):
        return f"Grid(extents={self.extents}, node_counts={self.node_counts})"

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return self.extents == other.extents and self.node_counts == other.node_counts

    def __hash__(self):
        return hash((self.extents, self.node_counts))

    @property
    def n(self):
        return int(np.prod(self.node_counts))

    @property
    def measure(self):
        return float(np.prod(self.extents))

    @cached_property
    def axes(self):
        return tuple(
            np.linspace(0.0, e, n) for e, n in zip(self.extents, self.node_counts)
        )

    @cached_property
    def coordinates(self):
        """Node coordinates, shape ``(n, dimension)``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return _readonly(np.stack([m.ravel() for m in mesh], axis=1))

    @cached_property
    def weights(self):
        per_axis = [_trapezoid_weights(n, h) for n, h in zip(self.node_counts, self.spacing)]
        w = per_axis[0]
        for extra in per_axis[1:]:
            w = np.outer(w, extra).ravel()
        return _readonly(w)

    @cached_property
    def boundary_mask(self):
        idx = np.indices(self.node_counts).reshape(self.dimension, -1)
        mask = np.zeros(self.n, dtype=bool)
        for axis, count in enumerate(self.node_counts):
            mask |= (idx[axis] == 0) | (idx[axis] == count - 1)
        mask.setflags(write=False)
        return mask

    @cached_property
    def boundary_indices(self):
        return np.flatnonzero(self.boundary_mask)

    @cached_property
    def boundary_weights(self):
        """Quadrature weights on the boundary nodes (counting measure in 1D)."""
        if self.dimension == 1:
            return _readonly(np.ones(2))
        nx, ny = self.node_counts
        hx, hy = self.spacing
        w = np.zeros(self.node_counts)
        # half the length of each adjacent boundary segment
        w[:, 0] += _trapezoid_weights(nx, hx)
        w[:, -1] += _trapezoid_weights(nx, hx)
        w[0, :] += _trapezoid_weights(ny, hy)
        w[-1, :] += _trapezoid_weights(ny, hy)
        return _readonly(w.ravel()[self.boundary_indices])

    @property
    def boundary_measure(self):
        return 2.0 if self.dimension == 1 else 2.0 * sum(self.extents)

    def _edge_structure(self, bc):
        if bc not in BOUNDARY_CONDITIONS:
            raise ValueError(f"unknown boundary condition {bc!r}")
        shape = self.node_counts
        index = np.arange(self.n).reshape(shape)
        rows, cols, vals, weights, axes = [], [], [], [], []
        n_edges = 0
        for axis in range(self.dimension):
            h = self.spacing[axis]
            transverse = np.ones(1)
            for other in range(self.dimension):
                if other != axis:
                    transverse = _trapezoid_weights(shape[other], self.spacing[other])
            lo = np.moveaxis(index, axis, 0)
            # interior edges: node k -> node k+1 along the axis
            a = lo[:-1].reshape(shape[axis] - 1, -1)
            b = lo[1:].reshape(shape[axis] - 1, -1)
            m = a.size
            e = n_edges + np.arange(m)
            rows += [e, e]
            cols += [b.ravel(), a.ravel()]
            vals += [np.full(m, 1.0 / h), np.full(m, -1.0 / h)]
            weights.append(np.tile(h * transverse, shape[axis] - 1))
            axes.append(np.full(m, axis))
            n_edges += m
            if bc == "dirichlet":
                # ghost-zero edges outside both ends of every grid line
                first, last = lo[0].ravel(), lo[-1].ravel()
                k = first.size
                e = n_edges + np.arange(2 * k)
                rows.append(e)
                cols.append(np.concatenate([first, last]))
                vals.append(np.concatenate([np.full(k, 1.0 / h), np.full(k, -1.0 / h)]))
                weights.append(np.tile(h * transverse, 2))
                axes.append(np.full(2 * k, axis))
                n_edges += 2 * k
        D = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n_edges, self.n),
        )
        return D, _readonly(np.concatenate(weights)), np.concatenate(axes)

    @cached_property
    def _edges(self):
        return {bc: self._edge_structure(bc) for bc in BOUNDARY_CONDITIONS}

    def difference_matrix(self, bc):
        """Sparse forward-difference matrix mapping node values to edges."""
        return self._edges[bc][0]

    def edge_weights(self, bc):
        return self._edges[bc][1]

    def edge_axes(self, bc):
        return self._edges[bc][2]

    @cached_property
    def _divergence_matrices(self):
        out = {}
        for bc, (D, we, _) in self._edges.items():
            out[bc] = sp.csr_matrix(-sp.diags(1.0 / self.weights) @ D.T @ sp.diags(we))
        return out

    def divergence_matrix(self, bc):
        return self._divergence_matrices[bc]

    def function(self, values):
        return GridFunction(self, values)

    def zeros(self):
        return GridFunction(self, np.zeros(self.n))

    def constant(self, c):
        return GridFunction(self, np.full(self.n, float(c)))

    def interpolate(self, func):
        """Sample ``func(*coords)`` at the nodes."""
        cols = [self.coordinates[:, k] for k in range(self.dimension)]
        return GridFunction(self, np.broadcast_to(func(*cols), (self.n,)).astype(float))


class GridFunction:
    """Node values of an element of L2 over a :class:`Grid` (or trace space).

    Instances are immutable; arithmetic returns new objects.
    """

    __array_priority__ = 100

    def __init__(self, grid, values):
        values = np.array(values, dtype=float).ravel()
        if values.shape != (grid.n,):
            raise ValueError(f"expected {grid.n} values, got {values.shape[0]}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid function values must be finite")
        values.setflags(write=False)
        self.grid = grid
        self.values = values

    def __repr__(self):
        return f"{type(self).__name__}({self.grid!r}, n={self.values.size})"

    def _other(self, other):
        if isinstance(other, GridFunction):
            if other.grid != self.grid:
                raise GridMismatchError("grid functions live on different grids")
            return other.values
        return other

    def _new(self, values):
        return type(self)(self.grid, values)

    def __add__(self, other):
        return self._new(self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self._new(self.values - self._other(other))

    def __rsub__(self, other):
        return self._new(self._other(other) - self.values)

    def __mul__(self, c):
        if isinstance(c, GridFunction):
            return NotImplemented
        return self._new(self.values * c)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self._new(self.values / c)

    def __neg__(self):
        return self._new(-self.values)

    def to_csv(self):
        """CSV text with columns node, coordinates..., value."""
        return grid_function_to_csv(self)


class EdgeField:
    """One value per mesh edge for a given boundary condition."""

    def __init__(self, grid, bc, values):
        values = np.array(values, dtype=float).ravel()
        n_edges = grid.difference_matrix(bc).shape[0]
        if values.shape != (n_edges,):
            raise ValueError(f"expected {n_edges} edge values, got {values.shape[0]}")
        values.setflags(write=False)
        self.grid = grid
        self.bc = bc
        self.values = values

    @property
    def weights(self):
        return self.grid.edge_weights(self.bc)

    @property
    def axes(self):
        return self.grid.edge_axes(self.bc)


def _check_same(u, v):
    if u.grid != v.grid:
        raise GridMismatchError("grid functions live on different grids")


def inner_product(u, v):
    """Weighted pairing ``sum_i w_i u_i v_i``."""
    _check_same(u, v)
    return float(np.dot(u.grid.weights * u.values, v.values))


def norm(u):
    return float(np.sqrt(max(inner_product(u, u), 0.0)))


def edge_inner_product(p, q):
    if p.grid != q.grid or p.bc != q.bc:
        raise GridMismatchError("edge fields live on different edge sets")
    return float(np.dot(p.weights * p.values, q.values))


def gradient(u, bc="neumann"):
    """Forward differences on edges; Dirichlet adds ghost-zero boundary edges."""
    return EdgeField(u.grid, bc, u.grid.difference_matrix(bc) @ u.values)


def divergence(q):
    """Negative weighted adjoint of :func:`gradient` for the field's bc."""
    return GridFunction(q.grid, q.grid.divergence_matrix(q.bc) @ q.values)


def grid_function_to_csv(u, header="# proxflow grid function v1"):
    buf = io.StringIO()
    buf.write(header + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    coords = getattr(u.grid, "coordinates", None)
    dim = coords.shape[1] if coords is not None else 0
    writer.writerow(["node"] + ["x", "y"][:dim] + ["value"])
    for i, val in enumerate(u.values):
        row = [i] + ([repr(float(c)) for c in coords[i]] if dim else []) + [repr(float(val))]
        writer.writerow(row)
    return buf.getvalue()


def grid_function_from_csv(text, grid):
    rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
    body = rows[1:]
    values = np.empty(grid.n)
    for r in body:
        values[int(r[0])] = float(r[-1])
    return GridFunction(grid, values)
