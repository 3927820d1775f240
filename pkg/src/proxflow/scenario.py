"""Scenario configuration: JSON parsing, catalogs and orchestration.

A scenario is one JSON document.  See the README for the full schema; the
top-level keys are ``name``, ``kind`` (``run``, ``perturbed`` or ``dtn``),
``grid``, ``energy``, ``initial``, ``forcing``, ``perturbation``, ``mesh``,
``tolerances``, ``picard``, ``contraction``, ``oracle``, ``slack`` and
``expect``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import oracles
from .dtn import TraceSpace, evolve_dtn
from .energy import EnergyFunctional, GraphSpec, LowerOrderSpec, convexity_defect
from .estimates import SLACK_KEYS, EstimateEntry, full_report, oracle_entry
from .evolution import TimeMesh, evolve
from .fixedpoint import PicardConfig, solve_perturbed
from .perturbation import NemytskiiSpec
from .space import Grid

KINDS = ("run", "perturbed", "dtn")
TOP_LEVEL_KEYS = {
    "name",
    "kind",
    "description",
    "grid",
    "energy",
    "dtn",
    "initial",
    "forcing",
    "perturbation",
    "mesh",
    "tolerances",
    "picard",
    "contraction",
    "oracle",
    "slack",
    "expect",
}


class ConfigError(ValueError):
    """Malformed or inconsistent scenario document."""


# --- catalogs ----------------------------------------------------------------


def _axis_profile(shape, k, x, length):
    arg = k * np.pi * x / length
    if shape == "sin":
        return np.sin(arg)
    if shape == "cos":
        return np.cos(arg)
    raise ConfigError(f"unknown mode shape {shape!r}")


def _time_profile(spec, t):
    kind = spec.get("time", "constant")
    rate = float(spec.get("rate", 1.0))
    if kind == "constant":
        return 1.0
    if kind == "sin":
        return np.sin(rate * t)
    if kind == "cos":
        return np.cos(rate * t)
    if kind == "linear":
        return rate * t
    raise ConfigError(f"unknown time profile {kind!r}")


def forcing_function(spec, extents=(1.0, 1.0)):
    """``f(t, x)`` for a forcing spec; ``x`` has shape ``(n, dim)``.

    Kinds: ``zero``; ``constant`` (``value``); ``mode`` (``shape`` sin/cos,
    ``k``, ``amplitude``, ``axis``, ``time`` in constant/sin/cos/linear with
    ``rate``).
    """
    spec = dict(spec or {"kind": "zero"})
    kind = spec.get("kind", "zero")
    if kind == "zero":
        return lambda t, x: np.zeros(x.shape[0])
    if kind == "constant":
        c = float(spec.get("value", 0.0))
        return lambda t, x: np.full(x.shape[0], c)
    if kind == "mode":
        k = float(spec.get("k", 1))
        amp = float(spec.get("amplitude", 1.0))
        axis = int(spec.get("axis", 0))
        shape = spec.get("shape", "sin")
        length = float(extents[axis]) if axis < len(extents) else 1.0
        _time_profile(spec, 0.0)
        return lambda t, x: amp * _time_profile(spec, t) * _axis_profile(shape, k, x[:, axis], length)
    raise ConfigError(f"unknown forcing kind {kind!r}")


def initial_data(spec, coordinates, extents, seed=0):
    """Node values of an initial-data spec at ``coordinates``.

    Catalog: ``zero``; ``constant`` (``value``); ``sine`` / ``cosine``
    (``k``, ``amplitude``, ``axis``, optional ``product`` over all axes);
    ``step`` (``x0``, ``low``, ``high``, ``axis``); ``random`` (``seed``,
    ``scale``), mixed with the command-line seed.
    """
    spec = dict(spec or {"kind": "zero"})
    kind = spec.get("kind", "zero")
    x = np.asarray(coordinates, dtype=float)
    n = x.shape[0]
    amp = float(spec.get("amplitude", 1.0))
    axis = int(spec.get("axis", 0))
    if kind == "zero":
        return np.zeros(n)
    if kind == "constant":
        return np.full(n, float(spec.get("value", 0.0)))
    if kind in ("sine", "cosine"):
        shape = "sin" if kind == "sine" else "cos"
        k = float(spec.get("k", 1))
        if spec.get("product", False):
            out = np.ones(n)
            for a in range(x.shape[1]):
                out = out * _axis_profile(shape, k, x[:, a], extents[a])
            return amp * out
        return amp * _axis_profile(shape, k, x[:, axis], extents[axis])
    if kind == "step":
        x0 = float(spec.get("x0", 0.5 * extents[axis]))
        lo, hi = float(spec.get("low", 0.0)), float(spec.get("high", 1.0))
        return np.where(x[:, axis] < x0, hi, lo)
    if kind == "random":
        rng = np.random.default_rng([int(seed), int(spec.get("seed", 0))])
        return rng.normal(0.0, float(spec.get("scale", 1.0)), n)
    raise ConfigError(f"unknown initial-data kind {kind!r}")


# --- parsing -------------------------------------------------------------------


def _positive(value, what):
    try:
        v = float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what} must be a number") from exc
    if not v > 0:
        raise ConfigError(f"{what} must be positive")
    return v


def parse_grid(spec):
    if not isinstance(spec, dict):
        raise ConfigError("grid must be an object")
    try:
        return Grid(spec.get("extents", [1.0]), spec["nodes"])
    except KeyError as exc:
        raise ConfigError("grid needs 'nodes'") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad grid: {exc}") from exc


def parse_energy(spec, grid):
    spec = dict(spec or {})
    try:
        lo = spec.get("lower_order")
        lower = None if lo is None else LowerOrderSpec(lo["name"], float(lo.get("param", 1.0)), lo.get("lipschitz"))
        graph = GraphSpec.from_dict(spec.get("graph", {"kind": "none"}))
        return EnergyFunctional(
            grid,
            p=spec.get("p", 2.0),
            bc=spec.get("bc", "dirichlet"),
            eps=spec.get("eps"),
            lower_order=lower,
            quadratic=float(spec.get("quadratic", 0.0)),
            graph=graph,
            omega=spec.get("omega"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad energy: {exc}") from exc


def parse_mesh(spec):
    spec = dict(spec or {})
    T = _positive(spec.get("T", 1.0), "mesh.T")
    try:
        N = int(spec["N"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("mesh needs an integer 'N'") from exc
    if N < 1:
        raise ConfigError("mesh.N must be >= 1")
    kind = spec.get("kind", "uniform")
    if kind == "uniform":
        return TimeMesh.uniform(T, N)
    if kind == "graded":
        gamma = float(spec.get("gamma", 2.0))
        if gamma < 1:
            raise ConfigError("mesh.gamma must be >= 1")
        return TimeMesh.graded(T, N, gamma)
    raise ConfigError(f"unknown mesh kind {kind!r}")


def parse_perturbation(spec, extents):
    if spec is None:
        return None
    spec = dict(spec)
    params = dict(spec.get("params", {}))
    if spec.get("kind") == "affine_forced":
        params["_f"] = forcing_function(params.get("forcing"), extents)
    try:
        return NemytskiiSpec(spec["kind"], params, spec.get("L"), spec.get("b"))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad perturbation: {exc}") from exc


@dataclass
class Scenario:
    """A parsed and validated scenario document."""

    name: str
    kind: str
    grid: Grid
    energy: EnergyFunctional | None
    initial: dict
    forcing: dict
    perturbation: NemytskiiSpec | None
    mesh: TimeMesh
    prox_tol: float = 1e-10
    inclusion_tol: float = 1e-6
    picard: PicardConfig = field(default_factory=PicardConfig)
    contraction: dict | None = None
    oracle: dict | None = None
    slack: dict = field(default_factory=dict)
    expect: str = "pass"
    dtn: dict = field(default_factory=dict)
    source: dict = field(default_factory=dict)

    @property
    def space(self):
        return TraceSpace(self.grid) if self.kind == "dtn" else self.grid


def parse_scenario(doc, seed=0):
    """Validate a scenario dict; raises :class:`ConfigError`."""
    if not isinstance(doc, dict):
        raise ConfigError("scenario must be a JSON object")
    unknown = set(doc) - TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    kind = doc.get("kind", "run")
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}")
    grid = parse_grid(doc.get("grid"))
    tols = dict(doc.get("tolerances", {}))
    prox_tol = _positive(tols.get("prox", 1e-10), "tolerances.prox")
    inclusion_tol = _positive(tols.get("inclusion", 1e-6), "tolerances.inclusion")
    pic = dict(doc.get("picard", {}))
    try:
        picard = PicardConfig(
            tol=_positive(tols.get("picard", 1e-10), "tolerances.picard"),
            max_iterations=int(pic.get("max_iterations", 200)),
            relaxation=float(pic.get("relaxation", 1.0)),
            guess=pic.get("guess", "zero"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad picard settings: {exc}") from exc
    energy = None
    dtn = dict(doc.get("dtn", {}))
    if kind == "dtn":
        if grid.dimension != 2 and grid.dimension != 1:
            raise ConfigError("dtn needs a 1D or 2D grid")
        if float(dtn.get("p", 2.0)) <= 1:
            raise ConfigError("dtn.p must exceed 1")
    else:
        energy = parse_energy(doc.get("energy"), grid)
        defect = convexity_defect(energy, np.random.default_rng(int(seed)), 32)
        if defect > 0:
            raise ConfigError(f"declared omega={energy.omega} is inconsistent (convexity defect {defect:.3e})")
    mesh = parse_mesh(doc.get("mesh"))
    if energy is not None:
        try:
            mesh.check_semiconvex(energy.omega)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    perturbation = parse_perturbation(doc.get("perturbation"), grid.extents)
    if kind == "perturbed" and perturbation is None:
        raise ConfigError("perturbed scenarios need a 'perturbation'")
    slack = doc.get("slack", {})
    if not isinstance(slack, dict):
        raise ConfigError("slack must be an object")
    expect = doc.get("expect", "pass")
    if expect not in ("pass", "fail"):
        raise ConfigError("expect must be 'pass' or 'fail'")
    forcing = doc.get("forcing", {"kind": "zero"})
    forcing_function(forcing, grid.extents)
    coords = TraceSpace(grid).coordinates if kind == "dtn" else grid.coordinates
    initial_data(doc.get("initial"), coords, grid.extents, seed)
    return Scenario(
        name=str(doc.get("name", "scenario")),
        kind=kind,
        grid=grid,
        energy=energy,
        initial=doc.get("initial", {"kind": "zero"}),
        forcing=forcing,
        perturbation=perturbation,
        mesh=mesh,
        prox_tol=prox_tol,
        inclusion_tol=inclusion_tol,
        picard=picard,
        contraction=doc.get("contraction"),
        oracle=doc.get("oracle"),
        slack={k: float(v) for k, v in slack.items()},
        expect=expect,
        dtn=dtn,
        source=doc,
    )


def load_scenario(path, seed=0):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_scenario(doc, seed)


def bundled_dir():
    return Path(__file__).resolve().parent / "scenarios"


def bundled_scenarios():
    return sorted(bundled_dir().glob("*.json"))


# --- execution -----------------------------------------------------------------


@dataclass
class ScenarioResult:
    scenario: Scenario
    trajectory: object
    report: object
    fixed_point: object = None
    pair: object = None


def _forcing_samples(spec, space, mesh, extents):
    f = forcing_function(spec, extents)
    x = space.coordinates
    return np.array([f(t, x) for t in mesh.nodes])


def _oracle_entries(sc, tr):
    if not sc.oracle:
        return []
    spec = dict(sc.oracle)
    kind = spec.get("kind")
    tol = float(spec.get("tol", 1e-2))
    T = sc.mesh.T
    u0 = tr.states[0]
    w = tr.energy.weights
    lam = 0.0
    if sc.perturbation is not None:
        if sc.perturbation.kind != "linear" and kind != "quarter_t_squared":
            raise ConfigError("linear oracles need a linear perturbation")
        lam = float(sc.perturbation.params.get("lam", 0.0))
    if kind in ("heat_expm", "linear_ode"):
        phi = sc.energy
        if phi.p != 2.0 or phi.lower_order is not None or not phi.graph.is_trivial:
            raise ConfigError(f"oracle {kind} needs a plain p=2 energy")
        ref = oracles.heat_solution(sc.grid, u0, T, phi.bc, lam - phi.quadratic)
        return [oracle_entry(f"oracle_{kind}", tr.states[-1], ref, w, tol)]
    if kind in ("schur_expm", "dtn_linear_ode"):
        if float(sc.dtn.get("p", 2.0)) != 2.0:
            raise ConfigError("Schur oracle needs p=2")
        ref = oracles.dtn_solution(sc.grid, u0, T, lam)
        return [oracle_entry(f"oracle_{kind}", tr.states[-1], ref, w, tol)]
    if kind == "quarter_t_squared":
        ref = np.full_like(u0, 0.25 * T * T)
        return [oracle_entry("oracle_quarter_t_squared", tr.states[-1], ref, w, tol)]
    raise ConfigError(f"unknown oracle {kind!r}")


def _picard_entries(sc, fp):
    if fp is None:
        return []
    last = fp.distances[-1] if fp.distances else 0.0
    out = [EstimateEntry("picard_convergence", last / sc.picard.tol, 1.0, fp.iterations)]
    limit = sc.source.get("picard", {}).get("max_ratio")
    if limit is not None:
        r = fp.ratios()[1:]
        r = r[np.isfinite(r)]
        worst = float(r.max()) if r.size else 0.0
        out.append(EstimateEntry("picard_ratio", worst, float(limit), -1))
    return out


def _check_slack_names(sc):
    known = set(SLACK_KEYS) | {"picard_convergence", "picard_ratio"}
    if sc.oracle:
        known.add(f"oracle_{sc.oracle.get('kind')}")
    unknown = set(sc.slack) - known
    if unknown:
        raise ConfigError(f"unknown slack override(s): {sorted(unknown)}")


def execute(sc, seed=0):
    """Run a parsed scenario; returns a :class:`ScenarioResult`.

    Solver failures propagate as ``RuntimeError`` subclasses.
    """
    _check_slack_names(sc)
    space = sc.space
    u0 = initial_data(sc.initial, space.coordinates, sc.grid.extents, seed)
    f = _forcing_samples(sc.forcing, space, sc.mesh, sc.grid.extents)
    fp = None
    pair = None
    if sc.kind == "run":
        tr = evolve(sc.energy, u0, f, sc.mesh, tol=sc.prox_tol)
        if sc.contraction:
            c = sc.contraction
            u0b = initial_data(c.get("initial", sc.initial), space.coordinates, sc.grid.extents, seed + 1)
            fb = _forcing_samples(c.get("forcing", sc.forcing), space, sc.mesh, sc.grid.extents)
            pair = evolve(sc.energy, u0b, fb, sc.mesh, tol=sc.prox_tol)
    elif sc.kind == "perturbed":
        tr, fp = solve_perturbed(sc.energy, sc.perturbation, u0, sc.mesh, sc.prox_tol, sc.picard)
    else:
        p = float(sc.dtn.get("p", 2.0))
        eps = float(sc.dtn.get("eps", 0.0))
        tr, fp = evolve_dtn(
            p, space.function(u0), sc.perturbation, sc.mesh, eps, sc.prox_tol, sc.picard, forcing=f
        )
    extra = _oracle_entries(sc, tr) + _picard_entries(sc, fp)
    report = full_report(
        tr,
        pair=pair,
        G=sc.perturbation,
        slacks=sc.slack,
        inclusion_tol=sc.inclusion_tol,
        extra=extra,
    )
    return ScenarioResult(sc, tr, report, fp, pair)
