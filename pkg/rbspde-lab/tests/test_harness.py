import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from src.config import ConfigError
from src.harness.cli import EXIT_CHECK_FAILED, EXIT_INPUT, EXIT_OK, main, parse_tolerances
from src.harness.manifest import MANIFEST_NAME, read_manifest


CONFIGS = Path(__file__).resolve().parent.parent / "configs"

BAD_EXPRESSION = """
version: 1
problem:
  dim: 1
  noise_dim: 1
  horizon: 0.5
  domain: [[0.0, 1.0]]
  constants: {lambda: 1.0, Lambda: 2.0}
  G: "sin(pi * x) + foo"
discretization:
  grid: [7]
  steps: 4
"""


KINK_OBSTACLE = """
version: 1
seed: 0
problem:
  name: kink
  dim: 1
  noise_dim: 1
  horizon: 0.5
  domain: [[-1.0, 1.0]]
  constants: {lambda: 1.0, Lambda: 2.0}
  G: 0
  xi: "max(0, 0.5 - abs(x)) - 0.1"
discretization:
  grid: [31]
  steps: 16
  recombine: true
penalization:
  schedule: [1, 16, 256]
  limit: true
"""


def _run(tmp_path, *argv):
    out = tmp_path / "run"
    code = main([*argv, "--out", str(out), "--log-dir", str(tmp_path / "logs")])
    return code, out, read_manifest(out / MANIFEST_NAME)


def test_validate_passes_on_heat_problem(tmp_path):
    code, out, manifest = _run(tmp_path, "validate", "--config", str(CONFIGS / "heat_manufactured.yaml"))
    assert code == EXIT_OK
    assert manifest["status"] == ["ok"]
    assert "assumptions.csv" in manifest["artifact"]
    assert MANIFEST_NAME in manifest["artifact"]
    assert manifest["check.assumption.parabolicity_margin"] == ["pass"]
    assert all(values == ["pass"] for key, values in manifest.items() if key.startswith("check."))


def test_validate_reports_margin_failure(tmp_path):
    code, out, manifest = _run(tmp_path, "validate", "--config", str(CONFIGS / "invalid_margin.yaml"))
    assert code == EXIT_CHECK_FAILED
    assert manifest["status"] == ["check_failed"]
    assert manifest["check.assumption.parabolicity_margin"] == ["fail"]
    assert "lambda - kappa" in manifest["metric.reason.parabolicity_margin"][0]
    table = pd.read_csv(out / "assumptions.csv")
    assert not table.empty


def test_expression_error_exits_with_input_code(tmp_path):
    config = tmp_path / "bad.yaml"
    config.write_text(BAD_EXPRESSION)
    code, _, manifest = _run(tmp_path, "validate", "--config", str(config))
    assert code == EXIT_INPUT
    assert manifest["status"] == ["error"]
    assert manifest["error"][0].startswith("ExpressionError")


def test_missing_config_exits_with_input_code(tmp_path):
    code, _, manifest = _run(tmp_path, "bspde", "--config", str(tmp_path / "missing.yaml"))
    assert code == EXIT_INPUT
    assert manifest["status"] == ["error"]


def test_plot_of_empty_csv_exits_with_input_code(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    code, _, manifest = _run(tmp_path, "plot", "--csv", str(empty), "--kind", "slice")
    assert code == EXIT_INPUT
    assert "empty CSV" in manifest["error"][0]


def test_bspde_runs_are_reproducible(tmp_path):
    outputs = []
    for name in ("first", "second"):
        code, out, manifest = _run(
            tmp_path / name, "bspde", "--config", str(CONFIGS / "heat_manufactured.yaml"), "--steps", "8"
        )
        assert code == EXIT_OK
        assert "u.csv" in manifest["artifact"] and "v1.csv" in manifest["artifact"]
        assert manifest["param.steps"] == ["8"]
        outputs.append((out / "u.csv").read_bytes())
    assert outputs[0] == outputs[1]


def test_stopping_command_agrees(tmp_path):
    code, out, manifest = _run(
        tmp_path, "stopping", "--config", str(CONFIGS / "smooth_oracle.yaml"), "--grid", "15", "--steps", "8"
    )
    assert code == EXIT_OK
    assert manifest["check.stopping"] == ["pass"]
    frame = pd.read_csv(out / "stopping.csv")
    assert list(frame.columns) == ["x1", "brute_force", "snell", "rbsde", "policy", "max_gap"]


def test_tolerance_overrides():
    assert parse_tolerances(["--tol.comp", "1e-4", "--tol.mono=1e-9"]) == {"comp": 1e-4, "mono": 1e-9}
    with pytest.raises(ConfigError):
        parse_tolerances(["--tol.nope", "1"])
    with pytest.raises(ConfigError):
        parse_tolerances(["--tol.comp", "-1"])
    with pytest.raises(ConfigError):
        parse_tolerances(["--tol.comp"])


def test_unknown_tolerance_is_a_usage_error(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["validate", "--tol.nope", "1", "--log-dir", str(tmp_path / "logs")])
    assert info.value.code == 2


def test_plot_renders_svg_from_solution_table(tmp_path):
    table = tmp_path / "u.csv"
    pd.DataFrame({"level": [0, 0, 0], "node": [0, 0, 0], "x1": [0.25, 0.5, 0.75], "u": [0.1, 0.2, 0.1]}).to_csv(
        table, index=False
    )
    svg = tmp_path / "u.svg"
    code, _, manifest = _run(tmp_path, "plot", "--csv", str(table), "--kind", "slice", "--output", str(svg))
    assert code == EXIT_OK
    assert svg.read_text().lstrip().startswith("<?xml")


def _consistent(code, manifest):
    passed = all(values == ["pass"] for key, values in manifest.items() if key.startswith("check."))
    return code == (EXIT_OK if passed else EXIT_CHECK_FAILED)


def test_penalize_command_matches_reference_and_reruns_identically(tmp_path):
    config = tmp_path / "kink.yaml"
    config.write_text(KINK_OBSTACLE)
    outputs = []
    for name in ("first", "second"):
        code, out, manifest = _run(tmp_path / name, "penalize", "--config", str(config))
        assert code == EXIT_OK
        for check in ("oracle", "complementarity", "minimality", "cauchy_decreasing", "penalty_mass_bounded"):
            assert manifest[f"check.{check}"] == ["pass"]
        assert float(manifest["metric.oracle_rel_l2"][0]) <= 1e-3
        history = pd.read_csv(out / "penalization.csv")
        assert history["n"].iloc[:-1].tolist() == [1.0, 16.0, 256.0]
        assert np.isinf(history["n"].iloc[-1])
        outputs.append(((out / "u.csv").read_bytes(), (out / "penalization.csv").read_bytes()))
    assert outputs[0] == outputs[1]


def test_solve_command_reruns_identically(tmp_path):
    outputs = []
    for name in ("first", "second"):
        code, out, manifest = _run(
            tmp_path / name, "solve", "--config", str(CONFIGS / "quasilinear.yaml"), "--grid", "9", "--steps", "4"
        )
        assert code == EXIT_OK
        assert manifest["check.contraction"] == ["pass"]
        assert manifest["check.uniqueness"] == ["pass"]
        assert manifest["check.complementarity"] == ["pass"]
        assert {"trace.csv", "u.csv", "mu.csv"} <= set(manifest["artifact"])
        outputs.append((out / "u.csv").read_bytes())
    assert outputs[0] == outputs[1]


def test_compare_command_orders_shifted_solutions(tmp_path):
    code, out, manifest = _run(
        tmp_path, "compare", "--config", str(CONFIGS / "quasilinear.yaml"), "--grid", "9", "--steps", "4"
    )
    assert code == EXIT_OK
    assert manifest["check.comparison"] == ["pass"]
    row = pd.read_csv(out / "comparison.csv").iloc[0]
    assert bool(row["passed"]) and not bool(row["skipped"])


def test_rbsde_check_on_wide_box(tmp_path):
    code, out, manifest = _run(tmp_path, "rbsde-check", "--config", str(CONFIGS / "equivalence.yaml"))
    assert manifest["check.equivalence"] == ["pass"]
    assert "check.pushforward" in manifest
    assert int(float(manifest["metric.equivalence.discarded"][0])) <= 3
    assert "equivalence.csv" in manifest["artifact"]
    assert _consistent(code, manifest)


def test_convergence_records_order_and_pushforward_checks(tmp_path):
    argv = ("convergence", "--config", str(CONFIGS / "equivalence.yaml"), "--levels", "2", "--grid", "31", "--steps", "8")
    code, out, manifest = _run(tmp_path / "default", *argv)
    assert "check.equivalence_order" in manifest
    assert "check.pushforward" in manifest
    table = pd.read_csv(out / "convergence.csv")
    assert {"equivalence_error", "equivalence_order", "violation_error"} <= set(table.columns)
    assert _consistent(code, manifest)

    code, _, manifest = _run(tmp_path / "strict", *argv, "--tol.order", "100")
    assert manifest["check.equivalence_order"] == ["fail"]
    assert code == EXIT_CHECK_FAILED


def test_convergence_reports_second_order_in_space(tmp_path):
    code, out, manifest = _run(
        tmp_path, "convergence", "--config", str(CONFIGS / "heat_manufactured.yaml"), "--levels", "3"
    )
    assert code == EXIT_OK
    assert manifest["check.solution_order"] == ["pass"]
    assert abs(float(manifest["metric.solution_order"][0]) - 2.0) <= 0.3
    table = pd.read_csv(out / "convergence.csv")
    assert table["equivalence_error"].isna().all()


def test_run_log_carries_command_and_spec_hash(tmp_path):
    code, out, manifest = _run(tmp_path, "validate", "--config", str(CONFIGS / "heat_manufactured.yaml"))
    assert code == EXIT_OK
    assert "run.log" in manifest["artifact"]
    records = [json.loads(line) for line in (out / "run.log").read_text().splitlines() if line.strip()]
    started = [r for r in records if r["message"] == "Command started"]
    assert len(started) == 1
    assert started[0]["command"] == "validate"
    assert started[0]["spec_hash"] == manifest["spec_hash"][0]
    assert started[0]["seed"] == int(manifest["seed"][0])
    assert any(r["message"] == "Command finished" and r["exit"] == EXIT_OK for r in records)
