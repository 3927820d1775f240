"""Nemytskii (superposition) operators ``(Gv)(t, x) = g(t, x, v(t, x))``.

Integrands come from a small catalog with documented growth constants
``|g(t, x, v)| <= L |v| + b(t)``.  Every evaluation can be audited against
the declared constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .space import GridFunction


def _forcing_field(spec):
    """``f(t, x)`` for the ``affine_forced`` integrand (see scenario forcing kinds)."""
    from .scenario import forcing_function

    return forcing_function(spec)


# name -> (integrand(t, x, v, params), default (L, b))
def _sqrt_abs(t, x, v, prm):
    return np.sqrt(np.abs(v))


def _linear(t, x, v, prm):
    return prm.get("lam", 0.0) * v


def _logistic(t, x, v, prm):
    a, b = prm.get("a", 1.0), prm.get("b", 1.0)
    return a * v / (1.0 + b * v * v)


def _power(t, x, v, prm):
    return np.sign(v) * np.abs(v) ** prm.get("r", 1.0)


def _affine_forced(t, x, v, prm):
    return prm.get("lam", 0.0) * v + prm["_f"](t, x)


def _default_constants(kind, prm):
    if kind == "sqrt_abs":
        return 1.0, 1.0
    if kind in ("linear", "affine_forced"):
        return abs(prm.get("lam", 0.0)), 0.0
    if kind == "logistic":
        return abs(prm.get("a", 1.0)), 0.0
    if kind == "power":
        return (1.0, 1.0) if prm.get("r", 1.0) <= 1.0 else (np.inf, 0.0)
    return 0.0, 0.0


INTEGRANDS = {
    "sqrt_abs": _sqrt_abs,
    "linear": _linear,
    "logistic": _logistic,
    "power": _power,
    "affine_forced": _affine_forced,
}


@dataclass
class GrowthAudit:
    """Largest sampled ``(|Gv| - L|v| - b(t))_+`` and where it happened."""

    violation: float = 0.0
    time_index: int = -1
    node: int = -1
    evaluations: int = 0

    @property
    def clean(self):
        return self.violation <= 0.0

    def merge(self, other):
        if other.violation > self.violation:
            self.violation, self.time_index, self.node = (
                other.violation,
                other.time_index,
                other.node,
            )
        self.evaluations += other.evaluations

    def to_dict(self):
        return {
            "violation": self.violation,
            "time_index": self.time_index,
            "node": self.node,
            "evaluations": self.evaluations,
        }


@dataclass
class NemytskiiSpec:
    """Catalog integrand plus declared growth constants.

    Parameters
    ----------
    kind : str
        One of ``sqrt_abs``, ``linear`` (``lam``), ``logistic`` (``a``, ``b``:
        ``a v / (1 + b v^2)``), ``power`` (``r``: ``sign(v)|v|^r``) and
        ``affine_forced`` (``lam`` and a ``forcing`` spec: ``lam v + f(t, x)``).
    params : dict
    L : float, optional
        Declared linear growth constant; catalog default when omitted.
    b : float or array, optional
        Declared offset ``b(t)``, a constant or one sample per mesh node.
    """

    kind: str
    params: dict = field(default_factory=dict)
    L: float | None = None
    b: object = None
    func: object = None

    def __post_init__(self):
        if self.kind == "callable":
            if self.func is None:
                raise ValueError("kind='callable' needs func")
        elif self.kind not in INTEGRANDS:
            raise ValueError(f"unknown integrand {self.kind!r}")
        self.params = dict(self.params)
        if self.kind == "affine_forced" and "_f" not in self.params:
            self.params["_f"] = _forcing_field(self.params.get("forcing", {"kind": "zero"}))
        L0, b0 = _default_constants(self.kind, self.params)
        if self.kind == "affine_forced" and self.b is None:
            b0 = None  # filled per time sample from sup |f(t, .)|
        if self.L is None:
            self.L = L0
        if self.b is None:
            self.b = b0

    @classmethod
    def zero(cls):
        return cls("linear", {"lam": 0.0})

    @property
    def is_zero(self):
        return self.kind == "linear" and self.params.get("lam", 0.0) == 0.0

    def integrand(self, t, x, v):
        if self.kind == "callable":
            return np.asarray(self.func(t, x, v), dtype=float)
        return INTEGRANDS[self.kind](t, x, v, self.params)

    def b_samples(self, times, x=None):
        times = np.asarray(times, dtype=float)
        if self.b is None:
            f = self.params["_f"]
            return np.array([np.max(np.abs(f(t, x))) for t in times])
        b = np.asarray(self.b, dtype=float)
        if b.ndim == 0:
            return np.full(times.shape, float(b))
        if b.shape != times.shape:
            raise ValueError("b samples must match the time mesh")
        return b

    def to_dict(self):
        prm = {k: v for k, v in self.params.items() if not k.startswith("_")}
        b = self.b
        if isinstance(b, np.ndarray):
            b = b.tolist()
        return {"kind": self.kind, "params": prm, "L": self.L, "b": b}


def apply(G, v, times, space=None):
    """Evaluate ``G`` on time samples ``v`` of shape ``(len(times), n)``.

    Returns ``(Gv, audit)`` where ``audit`` tallies the worst violation of
    the declared pointwise growth bound.
    """
    if space is None and isinstance(v, GridFunction):
        space = v.grid
    v = np.atleast_2d(np.asarray(v.values if isinstance(v, GridFunction) else v, dtype=float))
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if v.shape[0] != times.size:
        raise ValueError("one time per sample row is required")
    x = getattr(space, "coordinates", None)
    out = np.empty_like(v)
    for k, t in enumerate(times):
        out[k] = G.integrand(t, x, v[k])
    b = G.b_samples(times, x)
    gap = np.abs(out) - G.L * np.abs(v) - b[:, None]
    audit = GrowthAudit(evaluations=int(v.size))
    if gap.size:
        k, i = np.unravel_index(int(np.argmax(gap)), gap.shape)
        if gap[k, i] > 0:
            audit.violation, audit.time_index, audit.node = float(gap[k, i]), int(k), int(i)
    return out, audit


def growth_bound(G, v, times, space):
    """Per-sample ``||Gv(t)||`` and the certified ``L ||v(t)|| + b(t) sqrt(|Omega|)``."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    Gv, _ = apply(G, v, times, space)
    w = space.weights
    lhs = np.sqrt(np.einsum("ij,ij,j->i", Gv, Gv, w))
    vn = np.sqrt(np.einsum("ij,ij,j->i", v, v, w))
    b = G.b_samples(np.atleast_1d(times), getattr(space, "coordinates", None))
    rhs = G.L * vn + b * np.sqrt(w.sum())
    return lhs, rhs
