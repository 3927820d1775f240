"""Semiconvex energies on a grid.

An :class:`EnergyFunctional` is the sum of

* a p-Dirichlet term ``(1/p) sum_e w_e ((Du)_e^2 + eps^2)^{p/2}`` (shifted so
  that it vanishes at ``Du = 0``),
* an optional lower-order term ``sum_i w_i F1(x_i, u_i)`` with a Lipschitz
  derivative ``f1``,
* an optional quadratic ``(c/2) ||u||^2``,
* a pointwise convex term ``sum_i w_i j(u_i)`` described by a
  :class:`GraphSpec`.

``omega`` is the declared shift making ``phi + (omega/2)||.||^2`` convex.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .space import GridFunction

GRAPH_KINDS = (
    "none",
    "absolute_value",
    "indicator_interval",
    "power",
    "positive_part",
    "custom_monotone",
)

DEFAULT_EPS_SUBQUADRATIC = 1e-8

_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(32)


class ResolventBracketError(RuntimeError):
    """The monotone bisection could not bracket a root."""


def _as_values(u):
    return u.values if isinstance(u, GridFunction) else np.asarray(u, dtype=float)


def _pl_antiderivative(v, knots, values):
    """Integral from 0 to v of the piecewise-linear interpolant (constant tails)."""

    def prim(x):
        x = np.asarray(x, dtype=float)
        seg = np.diff(knots)
        slope = np.diff(values) / seg
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (values[:-1] + values[1:]) * seg)])
        out = np.empty_like(x)
        left = x < knots[0]
        right = x > knots[-1]
        mid = ~(left | right)
        out[left] = values[0] * (x[left] - knots[0])
        out[right] = cum[-1] + values[-1] * (x[right] - knots[-1])
        k = np.clip(np.searchsorted(knots, x[mid], side="right") - 1, 0, len(seg) - 1)
        dx = x[mid] - knots[k]
        out[mid] = cum[k] + values[k] * dx + 0.5 * slope[k] * dx**2
        return out

    return prim(v) - prim(np.zeros(1))[0]


@dataclass(frozen=True)
class GraphSpec:
    """A maximal monotone graph ``beta = dj`` with ``j(0) = 0``.

    Kinds and parameters:

    ``none``
        ``j = 0``.
    ``absolute_value``
        ``j(v) = |v|``.
    ``indicator_interval``
        ``j`` is the indicator of ``[a, b]``; requires ``a <= 0 <= b``.
    ``power``
        ``j(v) = |v|^q / q`` with ``q >= 1``.
    ``positive_part``
        ``j(v) = max(v, 0)``.
    ``custom_monotone``
        ``beta`` is the piecewise-linear interpolant of ``(knots, values)``
        (nondecreasing, constant outside the knots) plus upward jumps
        ``size`` at each ``location`` in ``jumps``.
    """

    kind: str = "none"
    a: float = 0.0
    b: float = 0.0
    q: float = 2.0
    knots: tuple = ()
    values: tuple = ()
    jumps: tuple = ()

    def __post_init__(self):
        if self.kind not in GRAPH_KINDS:
            raise ValueError(f"unknown graph kind {self.kind!r}")
        if self.kind == "indicator_interval" and not (self.a <= 0.0 <= self.b):
            raise ValueError("indicator_interval needs a <= 0 <= b")
        if self.kind == "power" and self.q < 1:
            raise ValueError("power graph needs q >= 1")
        if self.kind == "custom_monotone":
            knots = np.asarray(self.knots, dtype=float)
            vals = np.asarray(self.values, dtype=float)
            if knots.size < 2 or knots.shape != vals.shape:
                raise ValueError("custom_monotone needs matching knots/values (>= 2)")
            if np.any(np.diff(knots) <= 0) or np.any(np.diff(vals) < 0):
                raise ValueError("custom_monotone knots must increase and values must not decrease")
            if any(size <= 0 for _, size in self.jumps):
                raise ValueError("jump sizes must be positive")
            lo, hi = self.beta_interval(np.zeros(1))
            if not (lo[0] <= 0.0 <= hi[0]):
                raise ValueError("custom_monotone graph must contain (0, 0)")

    @classmethod
    def indicator(cls, a, b):
        return cls("indicator_interval", a=float(a), b=float(b))

    @classmethod
    def power_law(cls, q):
        return cls("power", q=float(q))

    @classmethod
    def custom(cls, knots, values, jumps=()):
        return cls(
            "custom_monotone",
            knots=tuple(float(k) for k in knots),
            values=tuple(float(v) for v in values),
            jumps=tuple((float(s), float(z)) for s, z in jumps),
        )

    @property
    def is_trivial(self):
        return self.kind == "none"

    def j(self, v):
        """Pointwise convex potential; ``+inf`` off the domain."""
        v = np.asarray(v, dtype=float)
        k = self.kind
        if k == "none":
            return np.zeros_like(v)
        if k == "absolute_value":
            return np.abs(v)
        if k == "indicator_interval":
            return np.where((v >= self.a) & (v <= self.b), 0.0, np.inf)
        if k == "power":
            return np.abs(v) ** self.q / self.q
        if k == "positive_part":
            return np.maximum(v, 0.0)
        out = _pl_antiderivative(v.ravel(), np.asarray(self.knots), np.asarray(self.values))
        for loc, size in self.jumps:
            out = out + size * (np.maximum(v.ravel() - loc, 0.0) - max(-loc, 0.0))
        return out.reshape(v.shape)

    def beta_interval(self, v):
        """Lower and upper ends of ``beta(v)`` (empty sets give ``lo > hi``)."""
        v = np.asarray(v, dtype=float)
        k = self.kind
        if k == "none":
            z = np.zeros_like(v)
            return z, z.copy()
        if k == "absolute_value" or (k == "power" and self.q == 1):
            s = np.sign(v)
            return np.where(v == 0, -1.0, s), np.where(v == 0, 1.0, s)
        if k == "power":
            g = np.sign(v) * np.abs(v) ** (self.q - 1)
            return g, g.copy()
        if k == "positive_part":
            lo = np.where(v > 0, 1.0, 0.0)
            hi = np.where(v >= 0, 1.0, 0.0)
            return lo, hi
        if k == "indicator_interval":
            inside = (v >= self.a) & (v <= self.b)
            lo = np.where(inside, 0.0, np.inf)
            hi = np.where(inside, 0.0, -np.inf)
            lo = np.where(inside & (v == self.a), -np.inf, lo)
            hi = np.where(inside & (v == self.b), np.inf, hi)
            return lo, hi
        base = np.interp(v, self.knots, self.values)
        lo, hi = base.copy(), base.copy()
        for loc, size in self.jumps:
            lo = lo + size * (v > loc)
            hi = hi + size * (v >= loc)
        return lo, hi

    def resolvent(self, tau, z):
        """The unique ``v`` with ``v + tau * beta(v)`` containing ``z``."""
        z = np.asarray(z, dtype=float)
        k = self.kind
        if k == "none":
            return z.copy()
        if k == "absolute_value" or (k == "power" and self.q == 1):
            return np.sign(z) * np.maximum(np.abs(z) - tau, 0.0)
        if k == "indicator_interval":
            return np.clip(z, self.a, self.b)
        if k == "positive_part":
            return np.where(z > tau, z - tau, np.where(z < 0.0, z, 0.0))
        return self._bisect(tau, z)

    def _bisect(self, tau, z, atol=1e-14, max_expand=60):
        z = np.asarray(z, dtype=float)
        zf = z.ravel()
        # invariant: lo <= root <= hi, i.e. F_lo(lo) <= z <= F_hi(hi)
        lo = np.minimum(zf, 0.0) - 1.0
        hi = np.maximum(zf, 0.0) + 1.0
        for _ in range(max_expand):
            bad_lo = lo + tau * self.beta_interval(lo)[0] > zf
            bad_hi = hi + tau * self.beta_interval(hi)[1] < zf
            if not (bad_lo.any() or bad_hi.any()):
                break
            width = hi - lo
            lo = np.where(bad_lo, lo - width, lo)
            hi = np.where(bad_hi, hi + width, hi)
        else:
            raise ResolventBracketError("could not bracket the resolvent; graph is malformed")
        for _ in range(2100):
            mid = 0.5 * (lo + hi)
            active = (hi - lo > atol) & (mid > lo) & (mid < hi)
            if not active.any():
                break
            left = mid + tau * self.beta_interval(mid)[0] <= zf
            lo = np.where(active & left, mid, lo)
            hi = np.where(active & ~left, mid, hi)
        return (0.5 * (lo + hi)).reshape(z.shape)

    def project_domain(self, v):
        """Nearest point of the closed domain of ``j``."""
        if self.kind == "indicator_interval":
            return np.clip(v, self.a, self.b)
        return np.asarray(v, dtype=float)

    def to_dict(self):
        out = {"kind": self.kind}
        if self.kind == "indicator_interval":
            out.update(a=self.a, b=self.b)
        elif self.kind == "power":
            out.update(q=self.q)
        elif self.kind == "custom_monotone":
            out.update(knots=list(self.knots), values=list(self.values), jumps=[list(j) for j in self.jumps])
        return out

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kind = d.pop("kind", "none")
        if kind == "custom_monotone":
            return cls.custom(d["knots"], d["values"], d.get("jumps", ()))
        return cls(kind, **{k: float(v) for k, v in d.items()})


# --- lower-order terms -----------------------------------------------------


def _lo_linear(c):
    return (lambda x, u: c * u), (lambda x, u: 0.5 * c * u**2), abs(c)


def _lo_sine(a):
    # 1 - cos(u) = 2 sin^2(u/2) without cancellation near 0
    return (lambda x, u: a * np.sin(u)), (lambda x, u: 2.0 * a * np.sin(0.5 * u) ** 2), abs(a)


def _lo_atan(a):
    # antiderivative left to quadrature on purpose
    return (lambda x, u: a * np.arctan(u)), None, abs(a)


def _lo_modulated_sine(a):
    return (
        (lambda x, u: a * np.cos(np.pi * x[:, 0]) * np.sin(u)),
        (lambda x, u: 2.0 * a * np.cos(np.pi * x[:, 0]) * np.sin(0.5 * u) ** 2),
        abs(a),
    )


LOWER_ORDER_CATALOG = {
    "linear": _lo_linear,
    "sine": _lo_sine,
    "atan": _lo_atan,
    "modulated_sine": _lo_modulated_sine,
}


@dataclass(frozen=True)
class LowerOrderSpec:
    """A Lipschitz reaction ``f1(x, u)`` with ``f1(x, 0) = 0`` from the catalog.

    ``lipschitz`` defaults to the catalog constant.  When the catalog entry
    has no closed-form antiderivative, ``F1`` is computed per node with
    32-point Gauss-Legendre quadrature of ``f1(x, .)`` on ``[0, u]``.
    """

    name: str
    param: float = 1.0
    lipschitz: float | None = None

    def __post_init__(self):
        if self.name not in LOWER_ORDER_CATALOG:
            raise ValueError(f"unknown lower-order term {self.name!r}")
        if self.lipschitz is None:
            object.__setattr__(self, "lipschitz", self._entry[2])
        if self.lipschitz < 0:
            raise ValueError("lipschitz constant must be nonnegative")

    @property
    def _entry(self):
        return LOWER_ORDER_CATALOG[self.name](float(self.param))

    @property
    def has_closed_form(self):
        return self._entry[1] is not None

    def f1(self, x, u):
        return self._entry[0](x, u)

    def F1(self, x, u):
        f, F, _ = self._entry
        if F is not None:
            return F(x, u)
        u = np.asarray(u, dtype=float)
        half = 0.5 * u
        s = half[:, None] * (_GAUSS_NODES[None, :] + 1.0)
        vals = np.stack([f(x, s[:, k]) for k in range(s.shape[1])], axis=1)
        return half * (vals @ _GAUSS_WEIGHTS)

    def audit_lipschitz(self, x, rng, n=1000, scale=5.0):
        """Largest sampled ``|f1(x,u) - f1(x,v)| - L|u - v|`` (should be <= 0)."""
        u = rng.uniform(-scale, scale, (n, x.shape[0]))
        v = rng.uniform(-scale, scale, (n, x.shape[0]))
        worst = -np.inf
        for a, b in zip(u, v):
            gap = np.abs(self.f1(x, a) - self.f1(x, b)) - self.lipschitz * np.abs(a - b)
            worst = max(worst, float(gap.max()))
        return worst

    def to_dict(self):
        return {"name": self.name, "param": self.param, "lipschitz": self.lipschitz}


# --- the functional --------------------------------------------------------


@dataclass(frozen=True)
class EnergyFunctional:
    """Composite semiconvex energy on ``grid``.

    Parameters
    ----------
    grid : Grid
    p : float or None
        Exponent of the p-Dirichlet term (``p > 1``); ``None`` drops it.
    bc : {"dirichlet", "neumann"}
    eps : float or None
        Regularization of the p-Dirichlet term.  Defaults to ``1e-8`` for
        ``p < 2`` and ``0`` otherwise.
    lower_order : LowerOrderSpec or None
    quadratic : float
        Coefficient ``c`` of an extra ``(c/2)||u||^2``; may be negative.
    graph : GraphSpec
    omega : float or None
        Declared convexity shift.  Defaults to the Lipschitz constant of
        ``f1`` plus ``max(0, -c)``.
    """

    grid: object
    p: float | None = 2.0
    bc: str = "dirichlet"
    eps: float | None = None
    lower_order: LowerOrderSpec | None = None
    quadratic: float = 0.0
    graph: GraphSpec = field(default_factory=GraphSpec)
    omega: float | None = None

    def __post_init__(self):
        if self.p is not None:
            if self.p <= 1:
                raise ValueError("p <= 1 is not supported (need p > 1)")
            if self.eps is None:
                object.__setattr__(self, "eps", DEFAULT_EPS_SUBQUADRATIC if self.p < 2 else 0.0)
            if self.eps < 0:
                raise ValueError("eps must be nonnegative")
        elif self.eps is None:
            object.__setattr__(self, "eps", 0.0)
        if self.bc not in ("dirichlet", "neumann"):
            raise ValueError(f"unknown boundary condition {self.bc!r}")
        if self.omega is None:
            lip = self.lower_order.lipschitz if self.lower_order is not None else 0.0
            object.__setattr__(self, "omega", float(lip + max(0.0, -self.quadratic)))
        if self.omega < 0:
            raise ValueError("omega must be nonnegative")

    @classmethod
    def zero(cls, grid):
        return cls(grid, p=None)

    # the prox solver and the trace reduction only rely on these members
    @property
    def space(self):
        return self.grid

    @property
    def weights(self):
        return self.grid.weights

    def smooth_value_and_gradient(self, u):
        """Smooth-part value and its Riesz gradient in one pass."""
        u = _as_values(u)
        w = self.grid.weights
        total = 0.0
        g = np.zeros_like(u)
        if self.p is not None:
            D = self.grid.difference_matrix(self.bc)
            we = self.grid.edge_weights(self.bc)
            d = D @ u
            p, eps = self.p, self.eps
            if eps == 0.0:
                dens = d * d if p == 2.0 else np.abs(d) ** p
            else:
                dens = (d * d + eps * eps) ** (0.5 * p) - eps**p
            total += float(np.dot(we, dens)) / p
            g -= self.grid.divergence_matrix(self.bc) @ _flux(d, p, eps)
        if self.lower_order is not None:
            x = self.grid.coordinates
            total += float(np.dot(w, self.lower_order.F1(x, u)))
            g += self.lower_order.f1(x, u)
        if self.quadratic:
            total += 0.5 * self.quadratic * float(np.dot(w, u * u))
            g += self.quadratic * u
        return total, g

    def smooth_value(self, u):
        return self.smooth_value_and_gradient(u)[0]

    def smooth_gradient_values(self, u):
        return self.smooth_value_and_gradient(u)[1]

    def nonsmooth_value(self, u):
        u = _as_values(u)
        if self.graph.is_trivial:
            return 0.0
        jv = self.graph.j(u)
        if np.any(np.isinf(jv)):
            return np.inf
        return float(np.dot(self.grid.weights, jv))

    def evaluate(self, u):
        """Energy value; ``+inf`` exactly when the indicator part is violated."""
        ns = self.nonsmooth_value(u)
        if np.isinf(ns):
            return np.inf
        return self.smooth_value(u) + ns

    __call__ = evaluate

    def evaluate_shifted(self, u):
        u = _as_values(u)
        return self.evaluate(u) + 0.5 * self.omega * float(np.dot(self.grid.weights, u * u))

    def smooth_gradient(self, u):
        """Riesz representer (weighted pairing) of the smooth part's derivative."""
        return GridFunction(self.grid, self.smooth_gradient_values(u))

    def shifted(self, extra):
        """Add ``(extra/2)||u||^2``; the declared shift drops by ``extra``."""
        if extra < 0:
            raise ValueError("extra must be nonnegative")
        if extra == 0:
            return self
        return replace(self, quadratic=self.quadratic + extra, omega=max(self.omega - extra, 0.0))

    def inclusion_residual(self, u, g):
        """Per-node distance from ``g - grad(smooth)(u)`` to ``beta(u)``."""
        u = _as_values(u)
        r = _as_values(g) - self.smooth_gradient_values(u)
        lo, hi = self.graph.beta_interval(u)
        return np.maximum(np.maximum(lo - r, r - hi), 0.0)

    def sample_feasible(self, rng, scale=1.0):
        """Random node values inside the closed domain."""
        return self.graph.project_domain(rng.normal(0.0, scale, self.grid.n))

    def describe(self):
        return {
            "p": self.p,
            "bc": self.bc,
            "eps": self.eps,
            "lower_order": None if self.lower_order is None else self.lower_order.to_dict(),
            "quadratic": self.quadratic,
            "graph": self.graph.to_dict(),
            "omega": self.omega,
        }


def _flux(d, p, eps):
    if p == 2.0 and eps == 0.0:
        return d
    if eps == 0.0:
        a = np.abs(d)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(a > 0, a ** (p - 2.0) * d, 0.0)
    return (d * d + eps * eps) ** (0.5 * p - 1.0) * d


def flux_derivative(d, p, eps):
    """Derivative of the edge flux with respect to the edge difference."""
    if p == 2.0 and eps == 0.0:
        return np.ones_like(d)
    if eps == 0.0:
        a = np.abs(d)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(a > 0, (p - 1.0) * a ** (p - 2.0), 0.0 if p > 2 else np.inf)
    s = d * d + eps * eps
    return s ** (0.5 * p - 2.0) * (s + (p - 2.0) * d * d)


def edge_flux(d, p, eps=0.0):
    return _flux(np.asarray(d, dtype=float), p, eps)


def convexity_defect(phi, rng, n_triples=32, scale=1.0):
    """Largest sampled violation of the shifted convexity inequality.

    Returns ``max(lhs - rhs - 1e-9 (1 + |a| + |b|))`` over random triples
    ``(u, v, theta)``; a convex shifted energy gives a value ``<= 0``.
    """
    worst = -np.inf
    for _ in range(n_triples):
        u = phi.sample_feasible(rng, scale)
        v = phi.sample_feasible(rng, scale)
        theta = rng.uniform(0.0, 1.0)
        a, b = phi.evaluate_shifted(u), phi.evaluate_shifted(v)
        mid = phi.evaluate_shifted(theta * u + (1 - theta) * v)
        gap = mid - theta * a - (1 - theta) * b - 1e-9 * (1 + abs(a) + abs(b))
        worst = max(worst, gap)
    return worst
