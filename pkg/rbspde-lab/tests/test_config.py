from pathlib import Path

import pytest

from src.config import ConfigError, load_config, parse_config


ROOT_DIR = Path(__file__).resolve().parent.parent

MINIMAL = """
version: 1
problem:
  dim: 1
  noise_dim: 1
  horizon: 0.5
  domain: [[0.0, 1.0]]
  constants: {lambda: 1.0, Lambda: 2.0}
  G: "sin(pi * x)"
discretization:
  grid: [15]
  steps: 4
"""


def test_minimal_config_gets_defaults():
    config = parse_config(MINIMAL)
    assert config.discretization.grid == [15]
    assert config.tolerances.comp == 1e-3
    assert config.penalization.schedule[0] == 1.0
    assert config.penalization.schedule[-1] == 4096.0
    assert config.checks.comparison == {"G": 1}
    assert config.output.snapshots == "csv"


def test_schema_errors_carry_location():
    text = MINIMAL.replace("steps: 4", "steps: -4")
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.path == ["discretization", "steps"]
    assert info.value.line == 12


def test_yaml_syntax_error_has_line():
    with pytest.raises(ConfigError) as info:
        parse_config("version: 1\nproblem: [unclosed\n")
    assert info.value.line is not None


def test_unknown_tolerance_and_dimension_mismatch():
    with pytest.raises(ConfigError):
        parse_config(MINIMAL + "tolerances:\n  bogus: 1.0\n")
    with pytest.raises(ConfigError):
        parse_config(MINIMAL.replace("grid: [15]", "grid: [15, 15]"))


def test_version_is_required():
    with pytest.raises(ConfigError):
        parse_config(MINIMAL.replace("version: 1", "version: 2"))


@pytest.mark.parametrize(
    "name",
    ["config.yaml", "configs/heat_manufactured.yaml", "configs/quasilinear.yaml", "configs/regular_obstacle.yaml",
     "configs/smooth_oracle.yaml", "configs/stochastic_linear.yaml", "configs/invalid_margin.yaml"],
)
def test_shipped_configs_parse(name):
    config = load_config(ROOT_DIR / name)
    assert config.version == 1
    assert len(config.discretization.grid) == config.problem["dim"]


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config(ROOT_DIR / "does-not-exist.yaml")
