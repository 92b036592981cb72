from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, Optional

import numpy as np
import pandas as pd

from src.bspde.checks import apriori_ratio, duality_check, energy_identity_residual
from src.bspde.solution import BackwardSolution, mean_square
from src.bspde.solver import SolverSettings, solve_linear_bspde
from src.config import LabConfig
from src.data.storage import save_field_binary, save_frame, save_node_fields_csv
from src.grid.spatial import SpatialGrid, build_grid
from src.harness.manifest import RunManifest
from src.harness.plots import render_plot
from src.lattice.tree import BudgetError, LatticeError, NoiseTree, build_joint_tree, build_tree
from src.monitoring.journal import DiagnosticsJournal
from src.pathwise.equivalence import equivalence_residual, pushforward_gap
from src.pathwise.rbsde import solve_reflected_bsde
from src.pathwise.stopping import brute_force_stopping, optimal_policy, policy_value, snell_value
from src.penalization.checks import minimality_check, regular_obstacle_bound_check, regular_potential, with_regular_obstacle
from src.penalization.measure import complementarity_residual, obstacle_fields
from src.penalization.oracle import psor_obstacle
from src.penalization.solver import HISTORY_COLUMNS, LIMIT, PenaltyTolerances, run_penalization
from src.problem.assumptions import validate_assumptions
from src.problem.builder import compile_field, shifted_problem, spec_from_config, spec_hash
from src.problem.spec import ProblemError, ProblemSpec
from src.quasilinear.checks import apriori_stability, comparison_test, uniqueness_probe
from src.quasilinear.continuation import (
    ContinuationResult,
    ContinuationSettings,
    solve_rbspde,
    theta_independent,
)
from src.utils.logging import get_logger
from src.utils.mathutils import observed_orders, pos_part, rel_l2


logger = get_logger(__name__)

DUALITY_MAX_PATHS = 256
DEFAULT_STOPPING_STEPS = 3


@dataclass
class LabContext:
    config: LabConfig
    spec: ProblemSpec
    grid: SpatialGrid
    tree: NoiseTree
    solver: SolverSettings
    manifest: RunManifest

    @property
    def out_dir(self) -> Path:
        return self.manifest.out_dir

    def artifact(self, name: str) -> Path:
        path = self.out_dir / name
        self.manifest.add_artifact(path)
        return path

    def continuation(self) -> ContinuationSettings:
        cont, tol = self.config.continuation, self.config.tolerances
        return ContinuationSettings(
            theta_step=cont.theta_step,
            theta_min=cont.theta_min,
            picard_tol=tol.picard,
            picard_max=cont.picard_max,
            ratio_limit=cont.ratio_limit,
        )

    def penalty_tolerances(self) -> PenaltyTolerances:
        tol = self.config.tolerances
        return PenaltyTolerances(mono=tol.mono, comp=tol.comp, mass_ratio=tol.mass_ratio)

    @property
    def schedule(self) -> list[float]:
        """Configured levels, closed by the limit level unless disabled."""
        pen = self.config.penalization
        levels = [float(n) for n in pen.schedule]
        if pen.limit and not np.isinf(levels[-1]):
            levels.append(LIMIT)
        return levels


def solver_settings(config: LabConfig) -> SolverSettings:
    tol = config.tolerances
    return SolverSettings(
        tol=tol.solve,
        method=config.discretization.method,
        inner_tol=tol.inner,
        inner_max=tol.inner_max,
        workers=config.workers,
    )


def build_context(config: LabConfig, command: str, manifest: Optional[RunManifest] = None) -> LabContext:
    problem = config.problem
    disc = config.discretization
    manifest = manifest or RunManifest(out_dir=Path(config.output.dir), command=command)
    manifest.spec_hash = spec_hash(problem)
    manifest.seed = config.seed
    manifest.parameters.update({
        "grid": list(disc.grid),
        "steps": disc.steps,
        "recombine": disc.recombine,
        "horizon": problem["horizon"],
        "schedule": list(config.penalization.schedule),
        "limit": config.penalization.limit,
        "tolerances": asdict(config.tolerances),
        "workers": config.workers,
    })
    spec = spec_from_config(problem)
    grid = build_grid(problem["domain"], disc.grid)
    tree = build_tree(spec.noise_dim, disc.steps, spec.horizon, disc.recombine)
    manifest.parameters["nodes"] = tree.node_count
    return LabContext(config, spec, grid, tree, solver_settings(config), manifest)


def boundary_excess(spec: ProblemSpec, tree: NoiseTree, grid: SpatialGrid) -> float:
    """Largest |G| and ξ⁺ on the points next to the truncation boundary."""
    index = np.indices(grid.shape).reshape(grid.dim, -1)
    rim = np.any((index == 0) | (index == np.asarray(grid.counts)[:, None] - 1), axis=0)
    values = [np.abs(spec.evaluate("G", spec.horizon, grid.points, tree.context(tree.steps, 0)))]
    if spec.has_obstacle:
        values.append(pos_part(spec.evaluate("xi", 0.0, grid.points, tree.context(0, 0))))
    return float(max(np.max(v[rim]) for v in values))


def warn_boundary(ctx: LabContext) -> None:
    excess = boundary_excess(ctx.spec, ctx.tree, ctx.grid)
    ctx.manifest.metrics["boundary_excess"] = excess
    if excess > ctx.config.tolerances.boundary:
        logger.warning(
            "Terminal or obstacle data are not small near the truncation boundary",
            {"excess": excess, "threshold": ctx.config.tolerances.boundary},
        )


def write_solution(ctx: LabContext, sol: BackwardSolution, prefix: str = "") -> None:
    snapshots = ctx.config.output.snapshots
    if snapshots in ("csv", "both"):
        save_node_fields_csv(ctx.grid, sol.u, ctx.artifact(f"{prefix}u.csv"), label="u")
        for r in range(ctx.spec.noise_dim):
            levels = [np.asarray(v)[:, r, :] for v in sol.v]
            save_node_fields_csv(ctx.grid, levels, ctx.artifact(f"{prefix}v{r + 1}.csv"), label=f"v{r + 1}")
    if snapshots in ("binary", "both"):
        save_field_binary(ctx.grid, np.asarray(sol.u[0][0]), ctx.artifact(f"{prefix}u_root.rbsf"))


def _plot(ctx: LabContext, csv_name: str, kind: str) -> None:
    csv_path = ctx.out_dir / csv_name
    if ctx.config.output.plots and csv_path.exists():
        render_plot(csv_path, kind, ctx.artifact(f"{Path(csv_name).stem}.svg"))


def _solution_metrics(ctx: LabContext, sol: BackwardSolution) -> None:
    ctx.manifest.metrics.update({
        "hnorm": sol.hnorm(),
        "vnorm": sol.vnorm(),
        "root_max": float(np.max(np.abs(sol.root()))),
        "projection_residual": sol.max_residual(),
    })


def cmd_validate(ctx: LabContext) -> int:
    report = validate_assumptions(
        ctx.spec,
        sample_budget=ctx.config.checks.assumption_samples,
        seed=ctx.config.seed,
        tree=ctx.tree,
        tol=ctx.config.tolerances.assumption,
        grid=ctx.grid,
    )
    save_frame(report.to_frame(), ctx.artifact("assumptions.csv"))
    for check in report.checks:
        ctx.manifest.record_check(f"assumption.{check.name}", check.passed)
    for failure in report.failures():
        ctx.manifest.metrics[f"reason.{failure.name}"] = failure.reason
        logger.warning("Assumption failed", {"check": failure.name, "reason": failure.reason})
    return 0 if report.passed else 1


def cmd_bspde(ctx: LabContext) -> int:
    sol = solve_linear_bspde(ctx.spec, ctx.tree, ctx.grid, ctx.solver)
    write_solution(ctx, sol)
    _solution_metrics(ctx, sol)
    energy = energy_identity_residual(sol, ctx.spec)
    ctx.manifest.metrics["energy_residual"] = energy.max_residual
    ctx.manifest.metrics["apriori_ratio"] = apriori_ratio(sol, ctx.spec)
    if not ctx.tree.recombining and ctx.tree.level_size(ctx.tree.steps) <= DUALITY_MAX_PATHS:
        try:
            duality = duality_check(ctx.spec, ctx.tree, ctx.grid, ctx.solver, solution=sol)
        except ProblemError as exc:
            logger.info("Duality check skipped", {"reason": str(exc)})
        else:
            ctx.manifest.metrics["duality_residual"] = duality.residual
            ctx.manifest.record_check("duality", duality.residual <= ctx.config.tolerances.duality)
    _plot(ctx, "u.csv", "slice")
    return 0 if ctx.manifest.passed else 1


def _contraction_ok(result: ContinuationResult) -> bool:
    ratios = [r for r in result.trace.accepted_ratios().values() if np.isfinite(r)]
    return all(r < 1.0 for r in ratios)


def cmd_solve(ctx: LabContext) -> int:
    if cmd_validate(ctx) != 0:
        logger.error("Assumptions failed, not solving", {"failures": len(ctx.manifest.checks) - sum(ctx.manifest.checks.values())})
        return 1
    warn_boundary(ctx)
    journal = DiagnosticsJournal(ctx.artifact("penalization.csv"), HISTORY_COLUMNS) if ctx.spec.has_obstacle else None
    settings = ctx.continuation()
    result = solve_rbspde(
        ctx.spec,
        ctx.tree,
        ctx.grid,
        ctx.schedule,
        settings,
        ctx.solver,
        ctx.penalty_tolerances(),
        journal=journal,
    )
    result.trace.save_csv(ctx.artifact("trace.csv"))
    write_solution(ctx, result.solution)
    _solution_metrics(ctx, result.solution)
    ctx.manifest.metrics["theta_breakpoints"] = result.trace.breakpoints
    ctx.manifest.metrics["halvings"] = len(result.trace.halvings)
    ctx.manifest.record_check("contraction", _contraction_ok(result))

    if result.measure is not None:
        result.measure.save_csv(ctx.artifact("mu.csv"))
        comp, min_gap = complementarity_residual(
            result.solution.u, obstacle_fields(ctx.spec, ctx.tree, ctx.grid), result.measure
        )
        ctx.manifest.metrics.update({"complementarity": comp, "min_gap": min_gap, "measure_mass": result.measure.total_mass()})
        ctx.manifest.record_check("complementarity", comp <= ctx.config.tolerances.comp)

    if ctx.config.checks.uniqueness:
        rerun = uniqueness_probe(
            ctx.spec,
            ctx.tree,
            ctx.grid,
            result,
            ctx.schedule,
            settings,
            ctx.solver,
            perturbation=ctx.config.checks.perturbation,
            seed=ctx.config.seed + 1,
            meas_tol=ctx.config.tolerances.meas,
        )
        ctx.manifest.metrics.update({"uniqueness_distance": rerun.distance, "uniqueness_mass_gap": rerun.mass_gap})
        ctx.manifest.record_check("uniqueness", rerun.passed)

    if ctx.config.checks.apriori:
        bound = apriori_stability(ctx.spec, ctx.tree, ctx.grid, ctx.schedule, settings, ctx.solver,
                                  tolerance=ctx.config.tolerances.apriori, result=result)
        ctx.manifest.metrics.update({"apriori_coarse": bound.coarse, "apriori_fine": bound.fine,
                                     "dominating_norm": bound.dominating})
        ctx.manifest.record_check("apriori_stability", bound.passed)

    _plot(ctx, "u.csv", "slice")
    _plot(ctx, "penalization.csv", "penalty")
    return 0 if ctx.manifest.passed else 1


def _minimality_trials(ctx: LabContext, spec: ProblemSpec, final: BackwardSolution, reference: Optional[np.ndarray]):
    def unit(t: float, x: np.ndarray, node) -> np.ndarray:
        return np.ones(x.shape[0])

    lift = regular_potential(spec, ctx.tree, ctx.grid, unit, ctx.solver, deterministic=spec.deterministic).u
    if reference is not None:
        sizes = ctx.tree.level_sizes
        base = [np.broadcast_to(reference[k], (sizes[k], ctx.grid.size)) for k in range(ctx.tree.steps + 1)]
    else:
        xi = obstacle_fields(spec, ctx.tree, ctx.grid)
        base = [np.maximum(np.asarray(u), np.asarray(x)) for u, x in zip(final.u, xi)]
    return [base, [np.asarray(b) + np.asarray(p) for b, p in zip(base, lift)]]


def cmd_penalize(ctx: LabContext) -> int:
    tol = ctx.config.tolerances
    spec = ctx.spec
    regular = ctx.config.checks.regular_obstacle
    if regular is not None:
        dim, noise = spec.spatial_dim, spec.noise_dim
        spec = with_regular_obstacle(
            spec,
            ctx.tree,
            ctx.grid,
            compile_field(regular["f_plus"], dim, noise),
            compile_field(regular["f_minus"], dim, noise),
            settings=ctx.solver,
        )
    if not spec.has_obstacle:
        raise ProblemError("penalize needs an obstacle: set problem.xi or checks.regular_obstacle")
    warn_boundary(ctx)

    journal = DiagnosticsJournal(ctx.artifact("penalization.csv"), HISTORY_COLUMNS)
    run = run_penalization(
        spec, ctx.tree, ctx.grid, ctx.schedule, ctx.penalty_tolerances(), ctx.solver, journal=journal
    )
    write_solution(ctx, run.final)
    run.measure.save_csv(ctx.artifact("mu.csv"))
    _solution_metrics(ctx, run.final)
    for name, ok in run.checks().items():
        ctx.manifest.record_check(name, ok)
    ctx.manifest.metrics["complementarity"] = run.complementarity
    rates = run.violation_rate()
    if rates.size and np.isfinite(rates[-1]):
        ctx.manifest.metrics["violation_rate"] = float(rates[-1])

    if spec.f_plus is not None:
        bound = regular_obstacle_bound_check(run, bound_tol=tol.bound)
        ctx.manifest.metrics.update({"bound_excess": bound.max_excess, "min_beta": bound.min_beta})
        ctx.manifest.record_check("density_bound", bound.passed)

    reference = None
    if spec.deterministic and spec.state_free:
        reference = psor_obstacle(spec, ctx.tree, ctx.grid)
        computed = np.stack([np.asarray(u)[0] for u in run.final.u])
        error = rel_l2(computed, reference)
        ctx.manifest.metrics["oracle_rel_l2"] = error
        if run.last_penalized is not None and run.last_penalized is not run.final:
            last = np.stack([np.asarray(u)[0] for u in run.last_penalized.u])
            ctx.manifest.metrics["oracle_rel_l2_last_penalized"] = rel_l2(last, reference)
        ctx.manifest.record_check("oracle", error <= tol.oracle)

    minimality = minimality_check(run, _minimality_trials(ctx, spec, run.final, reference), min_tol=tol.min)
    ctx.manifest.metrics["minimality_excess"] = minimality.max_excess
    ctx.manifest.record_check("minimality", minimality.passed)

    _plot(ctx, "penalization.csv", "penalty")
    _plot(ctx, "u.csv", "slice")
    return 0 if ctx.manifest.passed else 1


def cmd_compare(ctx: LabContext) -> int:
    shifts = ctx.config.checks.comparison
    spec_hi = spec_from_config(shifted_problem(ctx.config.problem, shifts))
    report = comparison_test(
        ctx.spec,
        spec_hi,
        ctx.tree,
        ctx.grid,
        ctx.schedule,
        ctx.continuation(),
        ctx.solver,
        cmp_tol=ctx.config.tolerances.cmp,
        samples=ctx.config.checks.assumption_samples,
        seed=ctx.config.seed,
    )
    row = {"passed": report.passed, "skipped": report.skipped, "reason": report.reason or "", "max_violation": report.max_violation}
    save_frame(pd.DataFrame([row]), ctx.artifact("comparison.csv"))
    ctx.manifest.parameters["shifts"] = dict(shifts)
    ctx.manifest.metrics["comparison_violation"] = report.max_violation
    if report.skipped:
        ctx.manifest.metrics["reason.comparison"] = report.reason
    ctx.manifest.record_check("comparison", report.passed)
    return 0 if report.passed else 1


def _joint_tree(ctx: LabContext, steps: int) -> NoiseTree:
    disc = ctx.config.discretization
    return build_joint_tree(ctx.spec.noise_dim, ctx.spec.spatial_dim, steps, ctx.spec.horizon, disc.joint_recombine)


def cmd_rbsde_check(ctx: LabContext, samples: Optional[int] = None) -> int:
    if not theta_independent(ctx.spec, ctx.tree, ctx.grid):
        raise ProblemError("rbsde-check needs a = I, sigma = 0 and f, g independent of (u, grad u, v)")
    joint = _joint_tree(ctx, ctx.tree.steps)
    result = solve_rbspde(ctx.spec, ctx.tree, ctx.grid, ctx.schedule, ctx.continuation(), ctx.solver,
                          ctx.penalty_tolerances())
    report = equivalence_residual(
        ctx.spec,
        result.solution,
        joint,
        samples=samples or ctx.config.checks.rbsde_samples,
        seed=ctx.config.seed,
        measure=result.measure,
    )
    report.save_csv(ctx.artifact("equivalence.csv"))
    ctx.manifest.metrics.update({f"equivalence.{key}": value for key, value in report.summary().items()})
    ctx.manifest.record_check("equivalence", report.max_y <= ctx.config.tolerances.equivalence)
    if result.measure is not None:
        ctx.manifest.record_check("pushforward", report.measure_gap <= ctx.config.tolerances.pushforward)
    return 0 if ctx.manifest.passed else 1


def cmd_stopping(ctx: LabContext) -> int:
    disc = ctx.config.discretization
    steps = disc.joint_steps or min(disc.steps, DEFAULT_STOPPING_STEPS)
    joint = _joint_tree(ctx, steps)
    rng = np.random.default_rng(ctx.config.seed)
    lower, upper = np.asarray(ctx.grid.lower), np.asarray(ctx.grid.upper)
    count = ctx.config.checks.stopping_instances
    starts = lower + (upper - lower) * rng.uniform(0.25, 0.75, size=(count, ctx.grid.dim))

    brute = brute_force_stopping(ctx.spec, starts, joint)
    snell = np.asarray(snell_value(ctx.spec, starts, joint)[0][0])
    reflected = np.asarray(solve_reflected_bsde(ctx.spec, starts, joint).root())
    policy = policy_value(ctx.spec, starts, joint, optimal_policy(ctx.spec, starts, joint))
    values = np.stack([brute, snell, reflected, policy])
    gap = np.max(values, axis=0) - np.min(values, axis=0)
    scale = np.maximum(1.0, np.max(np.abs(values), axis=0))

    frame = pd.DataFrame({f"x{i + 1}": starts[:, i] for i in range(ctx.grid.dim)})
    frame["brute_force"] = brute
    frame["snell"] = snell
    frame["rbsde"] = reflected
    frame["policy"] = policy
    frame["max_gap"] = gap
    save_frame(frame, ctx.artifact("stopping.csv"))
    ctx.manifest.parameters.update({"joint_steps": steps, "joint_nodes": joint.node_count})
    ctx.manifest.metrics["stopping_max_gap"] = float(np.max(gap))
    ctx.manifest.record_check("stopping", bool(np.all(gap <= ctx.config.tolerances.stopping * scale)))
    return 0 if ctx.manifest.passed else 1


def _level_setup(ctx: LabContext, level: int, mode: str) -> tuple[SpatialGrid, NoiseTree]:
    grid, steps = ctx.grid, ctx.tree.steps
    for _ in range(level):
        if mode in ("joint", "space"):
            grid = grid.refine()
        if mode in ("joint", "time"):
            steps *= 2
    tree = build_tree(ctx.spec.noise_dim, steps, ctx.spec.horizon, ctx.config.discretization.recombine)
    return grid, tree


def _solution_error(exact: Callable, sol: BackwardSolution, deterministic: bool = False) -> float:
    tree, grid = sol.tree, sol.grid
    worst = 0.0
    for k in range(tree.steps + 1):
        if deterministic:
            reference = exact(tree.time(k), grid.points, tree.context(k, 0))[None, :]
        else:
            reference = np.stack([exact(tree.time(k), grid.points, tree.context(k, i)) for i in range(tree.level_size(k))])
        worst = max(worst, mean_square(grid, tree, k, np.asarray(sol.u[k]) - reference))
    return float(np.sqrt(worst))


def _violation(spec: ProblemSpec, sol: BackwardSolution) -> float:
    xi = obstacle_fields(spec, sol.tree, sol.grid)
    if xi is None:
        return 0.0
    return float(max(np.max(pos_part(np.asarray(x) - np.asarray(u))) for u, x in zip(sol.u, xi)))


def _equivalence_error(ctx: LabContext, result: ContinuationResult, tree: NoiseTree) -> float:
    if not theta_independent(ctx.spec, tree, result.solution.grid):
        return float("nan")
    try:
        joint = _joint_tree(ctx, tree.steps)
    except (BudgetError, LatticeError) as exc:
        logger.warning("Equivalence error skipped at this level", {"steps": tree.steps, "reason": str(exc)})
        return float("nan")
    report = equivalence_residual(ctx.spec, result.solution, joint, ctx.config.checks.rbsde_samples, ctx.config.seed)
    return report.max_y


SOLUTION_ORDERS = {"space": 2.0, "time": 1.0}


def _order_checks(ctx: LabContext, table: pd.DataFrame, mode: str) -> None:
    tol = ctx.config.tolerances
    if "solution_order" in table and mode in SOLUTION_ORDERS:
        finite = table["solution_order"].dropna()
        if not finite.empty:
            expected = SOLUTION_ORDERS[mode]
            ctx.manifest.record_check("solution_order", abs(float(finite.iloc[-1]) - expected) <= tol.order_band)

    errors = table["equivalence_error"].to_numpy(dtype=float)
    steps = table["step"].to_numpy(dtype=float)
    keep = np.isfinite(errors) & (errors > 0.0)
    if keep.sum() < 2:
        return
    errors, steps = errors[keep], steps[keep]
    overall = float(np.log(errors[0] / errors[-1]) / np.log(steps[0] / steps[-1]))
    ctx.manifest.metrics["equivalence_overall_order"] = overall
    decreasing = bool(np.all(np.diff(errors) < 0.0))
    ctx.manifest.record_check("equivalence_order", decreasing and overall >= tol.order)


def _finest_pushforward(ctx: LabContext, result: ContinuationResult, tree: NoiseTree) -> None:
    if result.measure is None or not theta_independent(ctx.spec, tree, result.solution.grid):
        return
    try:
        lhs, rhs = pushforward_gap(ctx.spec, result.measure, _joint_tree(ctx, tree.steps))
    except (BudgetError, LatticeError) as exc:
        logger.warning("Push-forward check skipped at the finest level", {"steps": tree.steps, "reason": str(exc)})
        ctx.manifest.metrics["reason.pushforward"] = str(exc)
        return
    scale = max(abs(lhs), abs(rhs))
    gap = abs(lhs - rhs) / scale if scale > 0.0 else 0.0
    ctx.manifest.metrics.update({"pushforward_lhs": lhs, "pushforward_rhs": rhs, "pushforward_gap": gap})
    ctx.manifest.record_check("pushforward", gap <= ctx.config.tolerances.pushforward)


def cmd_convergence(ctx: LabContext, levels: Optional[int] = None, mode: Optional[str] = None) -> int:
    checks = ctx.config.checks
    levels = levels or checks.convergence_levels
    mode = mode or checks.convergence_mode
    if levels < 2:
        raise ValueError(f"convergence needs at least 2 refinement levels, got {levels}")
    exact = None
    if checks.exact is not None:
        exact = compile_field(checks.exact, ctx.spec.spatial_dim, ctx.spec.noise_dim)

    rows = []
    for level in range(levels):
        grid, tree = _level_setup(ctx, level, mode)
        result = solve_rbspde(ctx.spec, tree, grid, ctx.schedule, ctx.continuation(), ctx.solver,
                              ctx.penalty_tolerances())
        sol = result.solution
        row: Dict[str, float] = {
            "level": level,
            "h": float(np.max(grid.spacing)),
            "dt": tree.dt,
            "step": float(np.max(grid.spacing)) if mode == "space" else tree.dt,
        }
        if exact is not None:
            row["solution_error"] = _solution_error(exact, sol, ctx.spec.deterministic)
        row["energy_error"] = energy_identity_residual(sol, ctx.spec, freeze_state=ctx.spec.state_free).max_residual
        if ctx.spec.has_obstacle:
            row["violation_error"] = _violation(ctx.spec, sol)
        row["equivalence_error"] = _equivalence_error(ctx, result, tree)
        rows.append(row)
        logger.info("Refinement level finished", row)

    table = pd.DataFrame(rows)
    steps = table["step"].to_list()
    for col in [c for c in table.columns if c.endswith("_error")]:
        table[col.replace("_error", "_order")] = [float("nan")] + observed_orders(table[col].to_list(), steps)
        finite = table[col.replace("_error", "_order")].dropna()
        if not finite.empty:
            ctx.manifest.metrics[col.replace("_error", "_order")] = float(finite.iloc[-1])
    save_frame(table, ctx.artifact("convergence.csv"))
    ctx.manifest.parameters.update({"levels": levels, "mode": mode})
    _order_checks(ctx, table, mode)
    _finest_pushforward(ctx, result, tree)
    _plot(ctx, "convergence.csv", "rates")
    return 0 if ctx.manifest.passed else 1


COMMANDS = {
    "validate": cmd_validate,
    "solve": cmd_solve,
    "bspde": cmd_bspde,
    "penalize": cmd_penalize,
    "compare": cmd_compare,
    "rbsde-check": cmd_rbsde_check,
    "stopping": cmd_stopping,
    "convergence": cmd_convergence,
}