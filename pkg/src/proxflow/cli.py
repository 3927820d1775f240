"""Command-line interface: ``proxflow {run,perturbed,dtn,verify}``.

Exit codes: 0 all estimates pass, 1 an estimate failed, 2 configuration
error (or an empty suite), 3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .scenario import ConfigError, bundled_dir, execute, load_scenario

EXIT_OK, EXIT_ESTIMATE, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
OUT_ENV = "PROXFLOW_OUT"
TRAJECTORY_HEADER = "# proxflow trajectory v1"
BOUNDARY_HEADER = "# proxflow boundary trajectory v1"
STATES_HEADER = "# proxflow states v1"

log = logging.getLogger("proxflow")


def _fmt(x):
    return format(float(x), ".17g")


def atomic_write(path, text):
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def trajectory_csv(tr):
    rows = [TRAJECTORY_HEADER, "time,h_norm,energy,step_residual,prox_iterations"]
    norms = tr.norms()
    res = np.concatenate([[0.0], tr.residuals])
    its = np.concatenate([[0], tr.iterations])
    for t, nm, e, r, k in zip(tr.times, norms, tr.energies, res, its):
        rows.append(f"{_fmt(t)},{_fmt(nm)},{_fmt(e)},{_fmt(r)},{int(k)}")
    return "\n".join(rows) + "\n"


def boundary_csv(tr):
    idx = tr.space.indices
    rows = [BOUNDARY_HEADER, "boundary_node,time,value"]
    for t, u in zip(tr.times, tr.states):
        rows.extend(f"{int(i)},{_fmt(t)},{_fmt(v)}" for i, v in zip(idx, u))
    return "\n".join(rows) + "\n"


def states_csv(tr, which):
    rows = [STATES_HEADER, "time,node,value"]
    picks = range(len(tr.times)) if which == "all" else [len(tr.times) - 1]
    for n in picks:
        t = _fmt(tr.times[n])
        rows.extend(f"{t},{i},{_fmt(v)}" for i, v in enumerate(tr.states[n]))
    return "\n".join(rows) + "\n"


def parse_slack_overrides(items):
    out = {}
    for item in items or []:
        name, sep, value = item.partition("=")
        if not sep or not name:
            raise ConfigError(f"--slack-override expects NAME=VALUE, got {item!r}")
        try:
            out[name.strip()] = float(value)
        except ValueError as exc:
            raise ConfigError(f"--slack-override {name}: {value!r} is not a number") from exc
    return out


def default_out():
    return Path(os.environ.get(OUT_ENV, "proxflow_out"))


def run_one(config, out, seed=0, slack=None, dump="none", expected_kind=None):
    """Load, execute and write outputs for one scenario; returns ``(code, result)``."""
    try:
        sc = load_scenario(config, seed)
        if expected_kind is not None and sc.kind != expected_kind:
            raise ConfigError(f"{config}: scenario kind is {sc.kind!r}, not {expected_kind!r}")
        sc.slack.update(slack or {})
        result = execute(sc, seed)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG, None
    except RuntimeError as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER, None
    out = Path(out)
    tr = result.trajectory
    atomic_write(out / f"{sc.name}_trajectory.csv", trajectory_csv(tr))
    atomic_write(out / f"{sc.name}_estimates.json", result.report.to_json() + "\n")
    if sc.kind == "dtn":
        atomic_write(out / f"{sc.name}_boundary.csv", boundary_csv(tr))
    if result.fixed_point is not None:
        atomic_write(out / f"{sc.name}_fixed_point.json", result.fixed_point.to_json() + "\n")
    if dump != "none":
        atomic_write(out / f"{sc.name}_states.csv", states_csv(tr, dump))
    for e in result.report:
        log.info("%-24s ratio=%.4g slack=%.4g %s", e.name, e.ratio, e.slack, "ok" if e.passed else "FAIL")
    return (EXIT_OK if result.report.passed else EXIT_ESTIMATE), result


def _verify_task(args):
    path, out, seed = args
    try:
        expect = json.loads(Path(path).read_text()).get("expect", "pass")
    except (OSError, json.JSONDecodeError):
        expect = "pass"
    code, result = run_one(path, Path(out) / Path(path).stem, seed)
    failed = [] if result is None else [e.name for e in result.report.failures()]
    want = EXIT_ESTIMATE if expect == "fail" else EXIT_OK
    return Path(path).stem, expect, code, code == want, failed


def verify(suite=None, out=None, seed=0, jobs=1, stream=None):
    stream = sys.stdout if stream is None else stream
    suite = Path(suite) if suite is not None else bundled_dir()
    paths = sorted(suite.glob("*.json")) if suite.is_dir() else []
    if not paths:
        print(f"no scenarios found in {suite}", file=stream)
        return EXIT_CONFIG
    out = Path(out) if out is not None else default_out()
    tasks = [(str(p), str(out), seed) for p in paths]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_verify_task, tasks))
    else:
        rows = [_verify_task(t) for t in tasks]
    width = max(len(r[0]) for r in rows)
    print(f"{'scenario':<{width}}  expect  exit  status  failed checks", file=stream)
    for name, expect, code, ok, failed in rows:
        status = "ok" if ok else "DEVIATION"
        print(f"{name:<{width}}  {expect:<6}  {code:>4}  {status:<9} {','.join(failed)}", file=stream)
    bad = sum(not r[3] for r in rows)
    print(f"{len(rows) - bad}/{len(rows)} scenarios met expectations", file=stream)
    return EXIT_OK if bad == 0 else EXIT_ESTIMATE


def build_parser():
    parser = argparse.ArgumentParser(prog="proxflow", description="Gradient flows by minimizing movements.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every estimate entry")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("run", "implicit-Euler flow of a scenario"),
        ("perturbed", "flow with a Nemytskii perturbation (Picard iteration)"),
        ("dtn", "Dirichlet-to-Neumann flow on the boundary"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", type=Path, default=None, help=f"output directory (default ${OUT_ENV} or ./proxflow_out)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--slack-override", action="append", default=[], metavar="NAME=VALUE")
        p.add_argument("--dump-states", choices=("none", "final", "all"), default="none")
    p = sub.add_parser("verify", help="run the bundled scenario suite")
    p.add_argument("--suite", type=Path, default=None, help="directory of scenario JSON files")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "verify":
        return verify(args.suite, args.out, args.seed, max(1, args.jobs))
    try:
        slack = parse_slack_overrides(args.slack_override)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    out = args.out if args.out is not None else default_out()
    code, _ = run_one(args.config, out, args.seed, slack, args.dump_states, args.command)
    return code


if __name__ == "__main__":
    sys.exit(main())
