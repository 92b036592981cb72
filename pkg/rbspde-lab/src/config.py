from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import jsonschema
import yaml

from src.penalization.solver import DEFAULT_SCHEDULE


CONFIG_VERSION = 1

_EXPR = {"type": ["number", "string"]}
_MATRIX = {"oneOf": [_EXPR, {"type": "array", "items": {"type": "array", "items": _EXPR}}]}
_VECTOR = {"oneOf": [_EXPR, {"type": "array", "items": _EXPR}]}
_POSITIVE = {"type": "number", "exclusiveMinimum": 0}

SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["version", "problem", "discretization"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": CONFIG_VERSION},
        "seed": {"type": "integer", "minimum": 0},
        "workers": {"type": "integer", "minimum": 1},
        "problem": {
            "type": "object",
            "required": ["dim", "noise_dim", "horizon", "domain", "constants"],
            "additionalProperties": False,
            "properties": {
                "name": {"type": "string"},
                "dim": {"type": "integer", "minimum": 1},
                "noise_dim": {"type": "integer", "minimum": 1},
                "horizon": _POSITIVE,
                "domain": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                },
                "constants": {
                    "type": "object",
                    "required": ["lambda", "Lambda"],
                    "additionalProperties": False,
                    "properties": {
                        "lambda": _POSITIVE,
                        "Lambda": _POSITIVE,
                        "kappa": {"type": "number", "minimum": 0},
                        "beta": {"type": "number", "minimum": 0},
                        "rho": {"type": "number", "exclusiveMinimum": 1},
                        "L": _POSITIVE,
                    },
                },
                "a": _MATRIX,
                "sigma": _MATRIX,
                "f": _EXPR,
                "g": _VECTOR,
                "G": _EXPR,
                "xi": _EXPR,
                "xi_dom": _EXPR,
                "f_plus": _EXPR,
            },
        },
        "discretization": {
            "type": "object",
            "required": ["grid", "steps"],
            "additionalProperties": False,
            "properties": {
                "grid": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "steps": {"type": "integer", "minimum": 1},
                "recombine": {"type": "boolean"},
                "joint_steps": {"type": "integer", "minimum": 1},
                "joint_recombine": {"type": "boolean"},
                "method": {"enum": ["auto", "direct", "cg", "bicgstab"]},
            },
        },
        "tolerances": {"type": "object", "additionalProperties": _POSITIVE},
        "penalization": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "schedule": {"type": "array", "items": {"type": "number", "minimum": 1}, "minItems": 1},
                "limit": {"type": "boolean"},
            },
        },
        "continuation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "theta_step": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "theta_min": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "picard_max": {"type": "integer", "minimum": 1},
                "ratio_limit": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            },
        },
        "checks": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "assumption_samples": {"type": "integer", "minimum": 1},
                "rbsde_samples": {"type": "integer", "minimum": 1},
                "convergence_levels": {"type": "integer", "minimum": 2},
                "convergence_mode": {"enum": ["joint", "space", "time"]},
                "perturbation": {"type": "number", "minimum": 0},
                "stopping_instances": {"type": "integer", "minimum": 1},
                "uniqueness": {"type": "boolean"},
                "apriori": {"type": "boolean"},
                "exact": _EXPR,
                "comparison": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"G": _EXPR, "xi": _EXPR, "f": _EXPR},
                },
                "regular_obstacle": {
                    "type": "object",
                    "required": ["f_plus", "f_minus"],
                    "additionalProperties": False,
                    "properties": {"f_plus": _EXPR, "f_minus": _EXPR},
                },
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "plots": {"type": "boolean"},
                "snapshots": {"enum": ["csv", "binary", "both"]},
            },
        },
    },
}


class ConfigError(ValueError):
    def __init__(self, message: str, path: Sequence[Any] = (), line: Optional[int] = None, column: Optional[int] = None):
        where = "/".join(str(p) for p in path)
        location = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{where + ': ' if where else ''}{message}{location}")
        self.path = list(path)
        self.line = line
        self.column = column


@dataclass
class DiscretizationConfig:
    grid: List[int]
    steps: int
    recombine: bool = False
    joint_steps: Optional[int] = None
    joint_recombine: bool = False
    method: str = "auto"


@dataclass
class ToleranceConfig:
    solve: float = 1e-12
    inner: float = 1e-10
    inner_max: int = 100
    mono: float = 1e-10
    comp: float = 1e-3
    mass_ratio: float = 10.0
    bound: float = 1e-6
    min: float = 1e-3
    cmp: float = 1e-8
    picard: float = 1e-8
    meas: float = 1e-6
    refl: float = 1e-12
    duality: float = 1e-8
    equivalence: float = 0.1
    oracle: float = 1e-3
    assumption: float = 1e-9
    stopping: float = 1e-12
    pushforward: float = 0.1
    order: float = 1.0
    order_band: float = 0.3
    apriori: float = 0.2
    boundary: float = 1e-2


@dataclass
class PenalizationConfig:
    schedule: List[float] = field(default_factory=lambda: [float(n) for n in DEFAULT_SCHEDULE])
    limit: bool = True


@dataclass
class ContinuationConfig:
    theta_step: float = 0.5
    theta_min: float = 1.0 / 64.0
    picard_max: int = 50
    ratio_limit: float = 0.9


@dataclass
class ChecksConfig:
    assumption_samples: int = 256
    rbsde_samples: int = 32
    convergence_levels: int = 3
    convergence_mode: str = "joint"
    perturbation: float = 1e-3
    stopping_instances: int = 20
    uniqueness: bool = False
    apriori: bool = False
    exact: Optional[Any] = None
    comparison: Dict[str, Any] = field(default_factory=lambda: {"G": 1})
    regular_obstacle: Optional[Dict[str, Any]] = None


@dataclass
class OutputConfig:
    dir: str = "runs/default"
    plots: bool = True
    snapshots: str = "csv"


@dataclass
class LabConfig:
    version: int
    problem: Dict[str, Any]
    discretization: DiscretizationConfig
    tolerances: ToleranceConfig
    penalization: PenalizationConfig
    continuation: ContinuationConfig
    checks: ChecksConfig
    output: OutputConfig
    seed: int = 0
    workers: int = 1
    source: Optional[Path] = None

    def to_dict(self) -> Dict[str, Any]:
        raw = asdict(self)
        raw.pop("source")
        return raw


def _node_at(node: yaml.Node, path: Sequence[Any]) -> yaml.Node:
    for key in path:
        if isinstance(node, yaml.MappingNode):
            match = next((value for k, value in node.value if k.value == str(key)), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            match = node.value[key]
        else:
            match = None
        if match is None:
            break
        node = match
    return node


def _tolerances(raw: Dict[str, Any]) -> ToleranceConfig:
    known = ToleranceConfig.__dataclass_fields__
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"unknown tolerance(s) {unknown}", ["tolerances"])
    values = {key: (int(value) if key == "inner_max" else float(value)) for key, value in raw.items()}
    return ToleranceConfig(**values)


def parse_config(text: str, source: Optional[Path] = None) -> LabConfig:
    try:
        root = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        raise ConfigError(str(exc.problem), line=mark.line + 1 if mark else None,
                          column=mark.column + 1 if mark else None) from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")

    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        error = errors[0]
        path = list(error.absolute_path)
        mark = _node_at(root, path).start_mark
        raise ConfigError(error.message, path, mark.line + 1, mark.column + 1)

    problem = raw["problem"]
    if len(problem["domain"]) != problem["dim"]:
        raise ConfigError("domain needs one [lo, hi] pair per dimension", ["problem", "domain"])
    disc = raw["discretization"]
    if len(disc["grid"]) != problem["dim"]:
        raise ConfigError("grid needs one point count per dimension", ["discretization", "grid"])

    return LabConfig(
        version=raw["version"],
        problem=problem,
        discretization=DiscretizationConfig(**disc),
        tolerances=_tolerances(raw.get("tolerances", {})),
        penalization=PenalizationConfig(**raw.get("penalization", {})),
        continuation=ContinuationConfig(**raw.get("continuation", {})),
        checks=ChecksConfig(**raw.get("checks", {})),
        output=OutputConfig(**raw.get("output", {})),
        seed=int(raw.get("seed", 0)),
        workers=int(raw.get("workers", 1)),
        source=source,
    )


def load_config(path: str | Path) -> LabConfig:
    config_path = Path(path)
    try:
        text = config_path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {config_path}: {exc.strerror}") from exc
    return parse_config(text, config_path)
