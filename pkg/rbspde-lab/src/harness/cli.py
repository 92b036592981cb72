from __future__ import annotations

import argparse
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

from dotenv import load_dotenv

from src.bspde.solver import ConvergenceError
from src.config import ConfigError, LabConfig, ToleranceConfig, load_config
from src.data.loader import ArtifactError
from src.grid.solvers import SolverError
from src.grid.spatial import GridError
from src.harness.commands import COMMANDS, build_context, cmd_convergence, cmd_rbsde_check
from src.harness.manifest import RunManifest
from src.harness.plots import PLOT_KINDS, render_plot
from src.lattice.tree import BudgetError, LatticeError
from src.penalization.solver import MonotonicityError
from src.problem.expressions import ExpressionError
from src.problem.spec import ProblemError
from src.quasilinear.continuation import ContinuationError
from src.utils.logging import RUN_LOG_NAME, attach_run_log, bind_run, clear_run, configure_logging, detach_run_log, get_logger
from src.utils.timeutils import Stopwatch


logger = get_logger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT = 2
EXIT_SOLVER = 3

INPUT_ERRORS = (ConfigError, ExpressionError, ProblemError, ArtifactError, GridError, LatticeError, BudgetError, ValueError)
SOLVER_ERRORS = (SolverError, ConvergenceError, MonotonicityError, ContinuationError)


def _ints(text: str) -> List[int]:
    return [int(part) for part in text.split(",") if part.strip()]


def _floats(text: str) -> List[float]:
    return [float(part) for part in text.split(",") if part.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rbspde-lab")
    parser.add_argument("command", choices=sorted([*COMMANDS, "plot"]))
    parser.add_argument("--config", default="config.yaml")
    parser.add_argument("--grid", type=_ints, help="interior points per axis, e.g. 65 or 33,33")
    parser.add_argument("--steps", type=int)
    parser.add_argument("--schedule", type=_floats, help="penalty levels, e.g. 1,4,16,64")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--out")
    parser.add_argument("--samples", type=int, help="rbsde-check sample paths")
    parser.add_argument("--levels", type=int, help="convergence refinement levels")
    parser.add_argument("--mode", choices=["joint", "space", "time"])
    parser.add_argument("--csv", help="plot input")
    parser.add_argument("--kind", choices=PLOT_KINDS)
    parser.add_argument("--output", help="plot output file")
    parser.add_argument("--log-dir", default="logs")
    return parser


def parse_tolerances(extra: Sequence[str]) -> dict[str, float]:
    """Collect ``--tol.NAME VALUE`` and ``--tol.NAME=VALUE`` pairs."""
    known = ToleranceConfig.__dataclass_fields__
    out: dict[str, float] = {}
    tokens = list(extra)
    while tokens:
        token = tokens.pop(0)
        if not token.startswith("--tol."):
            raise ConfigError(f"unrecognized argument {token}")
        name, sep, value = token[len("--tol."):].partition("=")
        if not sep:
            if not tokens:
                raise ConfigError(f"--tol.{name} needs a value")
            value = tokens.pop(0)
        if name not in known:
            raise ConfigError(f"unknown tolerance {name!r}", ["tolerances"])
        try:
            out[name] = float(value)
        except ValueError as exc:
            raise ConfigError(f"--tol.{name}: not a number: {value!r}", ["tolerances", name]) from exc
        if out[name] <= 0:
            raise ConfigError(f"--tol.{name} must be positive", ["tolerances", name])
    return out


def apply_overrides(config: LabConfig, args: argparse.Namespace, tolerances: dict[str, float]) -> LabConfig:
    disc = config.discretization
    if args.grid is not None:
        if len(args.grid) != len(disc.grid):
            raise ConfigError(f"--grid needs {len(disc.grid)} counts", ["discretization", "grid"])
        disc = replace(disc, grid=args.grid)
    if args.steps is not None:
        disc = replace(disc, steps=args.steps)
    tol = config.tolerances
    if tolerances:
        tol = replace(tol, **{k: (int(v) if k == "inner_max" else v) for k, v in tolerances.items()})
    penalization = config.penalization
    if args.schedule is not None:
        penalization = replace(penalization, schedule=args.schedule)
    output = replace(config.output, dir=args.out) if args.out else config.output
    return replace(
        config,
        discretization=disc,
        tolerances=tol,
        penalization=penalization,
        output=output,
        seed=config.seed if args.seed is None else args.seed,
        workers=config.workers if args.workers is None else args.workers,
    )


def _plot(args: argparse.Namespace, manifest: RunManifest) -> int:
    if not args.csv or not args.kind:
        raise ArtifactError("plot needs --csv and --kind")
    out = Path(args.output) if args.output else manifest.out_dir / f"{Path(args.csv).stem}_{args.kind}.svg"
    manifest.parameters.update({"csv": args.csv, "kind": args.kind})
    manifest.add_artifact(render_plot(args.csv, args.kind, out))
    return EXIT_OK


def run(args: argparse.Namespace, tolerances: dict[str, float]) -> int:
    clock = Stopwatch()
    manifest = RunManifest(out_dir=Path(args.out or "runs/default"), command=args.command)
    code = EXIT_INPUT
    run_log = None
    bind_run(command=args.command)
    try:
        if args.command == "plot":
            code = _plot(args, manifest)
            return code
        config = apply_overrides(load_config(args.config), args, tolerances)
        manifest.out_dir = Path(config.output.dir)
        manifest.parameters["config"] = str(args.config)
        run_log = attach_run_log(manifest.out_dir)
        manifest.add_artifact(manifest.out_dir / RUN_LOG_NAME)
        ctx = build_context(config, args.command, manifest)
        bind_run(spec_hash=manifest.spec_hash, seed=config.seed)
        logger.info("Command started", {"out": str(manifest.out_dir)})
        if args.command == "convergence":
            code = cmd_convergence(ctx, args.levels, args.mode)
        elif args.command == "rbsde-check":
            code = cmd_rbsde_check(ctx, args.samples)
        else:
            code = COMMANDS[args.command](ctx)
        return code
    except INPUT_ERRORS as exc:
        manifest.error = f"{type(exc).__name__}: {exc}"
        logger.error("Invalid input", {"error": manifest.error})
        code = EXIT_INPUT
        return code
    except SOLVER_ERRORS as exc:
        manifest.error = f"{type(exc).__name__}: {exc}"
        logger.error("Solver failure", {"error": manifest.error})
        code = EXIT_SOLVER
        return code
    finally:
        manifest.status = {EXIT_OK: "ok", EXIT_CHECK_FAILED: "check_failed"}.get(code, "error")
        manifest.wall_clock = clock.elapsed()
        manifest.write()
        logger.info("Command finished", {"exit": code, "wall_clock": manifest.wall_clock})
        if run_log is not None:
            detach_run_log(run_log)
        clear_run()


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    configure_logging(args.log_dir)
    try:
        tolerances = parse_tolerances(extra)
    except ConfigError as exc:
        parser.error(str(exc))
    return run(args, tolerances)
