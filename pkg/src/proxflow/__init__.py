"""Gradient flows of semiconvex energies by minimizing movements."""

from .dtn import (
    BoundaryFunction,
    ReducedEnergy,
    TraceSpace,
    evolve_dtn,
    p_harmonic_extension,
    reduced_energy,
    trace,
)
from .energy import EnergyFunctional, GraphSpec, LowerOrderSpec
from .estimates import EstimateEntry, EstimateReport, full_report
from .evolution import TimeMesh, Trajectory, dissipation_check, evolve
from .fixedpoint import FixedPointReport, PicardConfig, growth_monitor, schaefer_monitor, solve_perturbed
from .perturbation import NemytskiiSpec
from .prox import ProxProblem, ProxResult, scalar_resolvent, solve_prox
from .space import Grid, GridFunction, inner_product, norm

__version__ = "0.1.0"

__all__ = [
    "BoundaryFunction",
    "EnergyFunctional",
    "EstimateEntry",
    "EstimateReport",
    "FixedPointReport",
    "GraphSpec",
    "Grid",
    "GridFunction",
    "LowerOrderSpec",
    "NemytskiiSpec",
    "PicardConfig",
    "ProxProblem",
    "ProxResult",
    "ReducedEnergy",
    "TimeMesh",
    "TraceSpace",
    "Trajectory",
    "dissipation_check",
    "evolve",
    "evolve_dtn",
    "full_report",
    "growth_monitor",
    "inner_product",
    "norm",
    "p_harmonic_extension",
    "reduced_energy",
    "scalar_resolvent",
    "schaefer_monitor",
    "solve_perturbed",
    "solve_prox",
    "trace",
]
