import json
import shutil

import numpy as np
import pytest

from proxflow import cli
from proxflow.energy import EnergyFunctional
from proxflow.scenario import ConfigError, bundled_dir, bundled_scenarios, load_scenario, parse_scenario

SMALL = {
    "name": "small",
    "kind": "run",
    "grid": {"extents": [1.0], "nodes": [16]},
    "energy": {"p": 2, "bc": "dirichlet"},
    "initial": {"kind": "random", "seed": 3, "scale": 0.2},
    "mesh": {"kind": "uniform", "T": 0.02, "N": 10},
    "contraction": {"initial": {"kind": "zero"}},
}


def write(tmp_path, doc, name=None):
    path = tmp_path / f"{name or doc['name']}.json"
    path.write_text(json.dumps(doc))
    return path


def bundled(name):
    return bundled_dir() / f"{name}.json"


def test_bundled_scenarios_parse():
    paths = bundled_scenarios()
    assert len(paths) >= 10
    for p in paths:
        sc = load_scenario(p)
        assert sc.name == p.stem


def test_malformed_configs_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["run", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert cli.main(["run", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    doc = dict(SMALL, surprise=1)
    assert cli.main(["run", "--config", str(write(tmp_path, doc)), "--out", str(tmp_path)]) == 2
    doc = dict(SMALL, mesh={"kind": "uniform", "T": -1.0, "N": 10})
    assert cli.main(["run", "--config", str(write(tmp_path, doc)), "--out", str(tmp_path)]) == 2


def test_wrong_subcommand_exits_2(tmp_path):
    assert cli.main(["dtn", "--config", str(write(tmp_path, SMALL)), "--out", str(tmp_path)]) == 2


def test_bad_slack_override_exits_2(tmp_path):
    path = str(write(tmp_path, SMALL))
    assert cli.main(["run", "--config", path, "--out", str(tmp_path), "--slack-override", "oops"]) == 2
    assert cli.main(["run", "--config", path, "--out", str(tmp_path), "--slack-override", "nonsense=2"]) == 2


def test_inconsistent_omega_is_config_error():
    # an underdeclared Lipschitz constant must be caught by the convexity probe
    doc = dict(SMALL, energy={"p": None, "lower_order": {"name": "linear", "param": -3.0, "lipschitz": 0.0}})
    with pytest.raises(ConfigError, match="convexity defect"):
        parse_scenario(doc)
    ok = dict(SMALL, energy={"p": None, "lower_order": {"name": "linear", "param": -3.0}})
    assert parse_scenario(ok).energy.omega == 3.0


def test_run_outputs_and_determinism(tmp_path):
    path = str(write(tmp_path, SMALL))
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert cli.main(["run", "--config", path, "--out", str(out), "--seed", "7", "--dump-states", "all"]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == ["small_estimates.json", "small_states.csv", "small_trajectory.csv"]
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()
    lines = (a / "small_trajectory.csv").read_text().splitlines()
    assert lines[0] == cli.TRAJECTORY_HEADER
    assert lines[1] == "time,h_norm,energy,step_residual,prox_iterations"
    assert len(lines) == 2 + 11
    states = (a / "small_states.csv").read_text().splitlines()
    assert len(states) == 2 + 11 * 16
    report = json.loads((a / "small_estimates.json").read_text())
    assert {"apriori_bound", "contraction", "dissipation"} <= {e["name"] for e in report}
    assert all(set(e) == {"name", "ratio", "slack", "pass", "worst_time_index"} for e in report)
    c = tmp_path / "c"
    cli.main(["run", "--config", path, "--out", str(c), "--seed", "8"])
    assert (c / "small_trajectory.csv").read_bytes() != (a / "small_trajectory.csv").read_bytes()


def test_slack_override_can_fail_a_run(tmp_path):
    path = str(write(tmp_path, SMALL))
    assert cli.main(["run", "--config", path, "--out", str(tmp_path), "--slack-override", "apriori_bound=1e-9"]) == 1


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert cli.main(["run", "--config", str(write(tmp_path, SMALL))]) == 0
    assert (tmp_path / "env" / "small_trajectory.csv").exists()


def test_bundled_heat_exits_0(tmp_path):
    assert cli.main(["run", "--config", str(bundled("heat")), "--out", str(tmp_path)]) == 0


def test_bundled_negative_exits_1(tmp_path):
    assert cli.main(["run", "--config", str(bundled("negative_loose_tol")), "--out", str(tmp_path)]) == 1


def test_perturbed_zero_seed(tmp_path):
    assert cli.main(["perturbed", "--config", str(bundled("example_sqrt_zero_seed")), "--out", str(tmp_path)]) == 0
    fp = json.loads((tmp_path / "example_sqrt_zero_seed_fixed_point.json").read_text())
    assert fp["converged"]
    csv = (tmp_path / "example_sqrt_zero_seed_trajectory.csv").read_text().splitlines()[2:]
    assert all(float(row.split(",")[1]) == 0.0 for row in csv)


def test_dtn_constant_writes_boundary_csv(tmp_path):
    assert cli.main(["dtn", "--config", str(bundled("dtn_constant")), "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "dtn_constant_boundary.csv").read_text().splitlines()
    assert lines[:2] == [cli.BOUNDARY_HEADER, "boundary_node,time,value"]


def test_verify_empty_suite_exits_2(tmp_path):
    assert cli.main(["verify", "--suite", str(tmp_path), "--out", str(tmp_path / "o")]) == 2


def _mini_suite(tmp_path):
    suite = tmp_path / "suite"
    suite.mkdir()
    write(suite, SMALL)
    shutil.copy(bundled("dtn_constant"), suite)
    return suite


def test_verify_small_suite(tmp_path, capsys):
    assert cli.main(["verify", "--suite", str(_mini_suite(tmp_path)), "--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    assert "2/2 scenarios met expectations" in out


def test_verify_catches_gradient_sign_bug(tmp_path, monkeypatch, capsys):
    original = EnergyFunctional.smooth_value_and_gradient

    def flipped(self, u):
        val, grad = original(self, u)
        return val, -grad

    monkeypatch.setattr(EnergyFunctional, "smooth_value_and_gradient", flipped)
    code = cli.main(["verify", "--suite", str(_mini_suite(tmp_path)), "--out", str(tmp_path / "o"), "--jobs", "1"])
    assert code != 0
    assert "DEVIATION" in capsys.readouterr().out


def test_unknown_expect_value():
    with pytest.raises(ConfigError):
        parse_scenario(dict(SMALL, expect="maybe"))


def test_random_initial_data_uses_cli_seed():
    from proxflow.scenario import initial_data

    x = np.linspace(0, 1, 8)[:, None]
    a = initial_data({"kind": "random", "seed": 1}, x, (1.0,), seed=0)
    b = initial_data({"kind": "random", "seed": 1}, x, (1.0,), seed=1)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, initial_data({"kind": "random", "seed": 1}, x, (1.0,), seed=0))
