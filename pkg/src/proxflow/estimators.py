"""scikit-learn transformers over rows of node values on a 1D grid.

Each sample is one grid function (``n_features`` = number of nodes).
``fit`` only records the grid size and builds the energy; there is nothing
to learn, but the estimator protocol lets the maps sit in pipelines and be
cloned or grid-searched over their parameters.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .energy import EnergyFunctional, GraphSpec
from .evolution import TimeMesh, evolve
from .prox import ProxProblem, solve_prox
from .space import Grid


class _EnergyParams(BaseEstimator):
    def _build(self, n):
        if n < 2:
            raise ValueError("need at least two nodes per sample")
        graph = GraphSpec.from_dict(self.graph) if self.graph else GraphSpec()
        return EnergyFunctional(Grid.interval(self.length, n), p=self.p, bc=self.bc, graph=graph)

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.energy_ = self._build(X.shape[1])
        self.n_features_in_ = X.shape[1]
        return self

    def _check(self, X):
        check_is_fitted(self, "energy_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X


class ProximalMap(TransformerMixin, _EnergyParams):
    """Row-wise resolvent ``(I + tau d phi)^{-1}`` of a p-Dirichlet energy.

    Parameters
    ----------
    tau : float
        Resolvent parameter.
    p, bc, length : energy on ``[0, length]`` with ``n_features`` nodes.
    graph : dict or None
        Pointwise graph term, as accepted by ``GraphSpec.from_dict``.
    tol : float
        Prox tolerance.
    """

    def __init__(self, tau=1e-2, p=2.0, bc="dirichlet", length=1.0, graph=None, tol=1e-10):
        self.tau = tau
        self.p = p
        self.bc = bc
        self.length = length
        self.graph = graph
        self.tol = tol

    def transform(self, X):
        X = self._check(X)
        return np.vstack(
            [solve_prox(ProxProblem(self.energy_, self.tau, row, tol=self.tol)).minimizer.values for row in X]
        )


class GradientFlow(TransformerMixin, _EnergyParams):
    """Maps initial data rows to the implicit-Euler state at time ``T``."""

    def __init__(self, T=0.1, n_steps=100, p=2.0, bc="dirichlet", length=1.0, graph=None, tol=1e-10):
        self.T = T
        self.n_steps = n_steps
        self.p = p
        self.bc = bc
        self.length = length
        self.graph = graph
        self.tol = tol

    def fit(self, X, y=None):
        super().fit(X, y)
        self.mesh_ = TimeMesh.uniform(self.T, self.n_steps)
        return self

    def transform(self, X):
        X = self._check(X)
        return np.vstack([evolve(self.energy_, row, None, self.mesh_, tol=self.tol).states[-1] for row in X])
