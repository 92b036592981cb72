from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from src.bspde.solution import BackwardSolution
from src.bspde.solver import BackwardScheme, SolverSettings
from src.grid.spatial import SpatialGrid
from src.lattice.tree import NoiseTree
from src.penalization.solver import PenalizedRun
from src.problem.spec import FieldMap, ProblemError, ProblemSpec, TerminalMap, tabulate_process
from src.utils.logging import get_logger


logger = get_logger(__name__)


@dataclass
class BoundReport:
    passed: bool
    max_excess: float
    min_beta: float
    witness: dict = field(default_factory=dict)


@dataclass
class MinimalityReport:
    passed: bool
    accepted: int
    rejected: int
    max_excess: float
    witness: dict = field(default_factory=dict)


def _level_fields(spec: ProblemSpec, tree: NoiseTree, grid: SpatialGrid, which: str, levels: int) -> list[np.ndarray]:
    return [
        np.stack([
            spec.evaluate(which, tree.time(k), grid.points, tree.context(k, i)) for i in range(tree.level_size(k))
        ])
        for k in range(levels)
    ]


def regular_obstacle_bound_check(
    run: PenalizedRun,
    f_plus: Optional[Sequence[np.ndarray]] = None,
    bound_tol: float = 1e-6,
) -> BoundReport:
    """0 ≤ β ≤ f₊ + tol at every (level, node, point) of the final penalized density."""
    spec, sol = run.spec, run.final
    tree, grid = sol.tree, sol.grid
    if f_plus is None:
        if spec.f_plus is None:
            raise ProblemError("regular obstacle check needs the upward drift f_plus of the obstacle")
        f_plus = _level_fields(spec, tree, grid, "f_plus", tree.steps)
    worst, min_beta, witness = -np.inf, np.inf, {}
    for k in range(tree.steps):
        beta = np.asarray(run.measure.density[k])
        excess = beta - np.asarray(f_plus[k])
        node, point = np.unravel_index(int(np.argmax(excess)), excess.shape)
        if excess[node, point] > worst:
            worst = float(excess[node, point])
            witness = {"level": k, "node": int(node), "x": grid.points[point].tolist(), "beta": float(beta[node, point])}
        min_beta = min(min_beta, float(np.min(beta)))
    report = BoundReport(
        passed=worst <= bound_tol and min_beta >= -bound_tol,
        max_excess=max(worst, 0.0),
        min_beta=min_beta,
        witness=witness,
    )
    logger.info("Regular obstacle bound", {"passed": report.passed, "max_excess": report.max_excess})
    return report


def minimality_check(
    run: PenalizedRun,
    trials: Sequence[Sequence[np.ndarray]],
    min_tol: float = 1e-3,
    dom_tol: float = 1e-12,
) -> MinimalityReport:
    """u ≤ w + tol for every trial supersolution w that dominates the obstacle."""
    u, xi = run.final.u, run.obstacle
    accepted, rejected, worst, witness = 0, 0, -np.inf, {}
    for t, trial in enumerate(trials):
        if len(trial) != len(u):
            raise ValueError(f"trial {t} has {len(trial)} levels, expected {len(u)}")
        below = max(float(np.max(np.asarray(xi[k]) - np.asarray(trial[k]))) for k in range(len(u)))
        if below > dom_tol:
            rejected += 1
            logger.warning("Minimality trial rejected, it does not dominate the obstacle", {"trial": t, "gap": below})
            continue
        accepted += 1
        for k in range(len(u)):
            excess = np.asarray(u[k]) - np.asarray(trial[k])
            if float(np.max(excess)) > worst:
                node, point = np.unravel_index(int(np.argmax(excess)), excess.shape)
                worst = float(excess[node, point])
                witness = {"trial": t, "level": k, "node": int(node), "point": int(point)}
    report = MinimalityReport(
        passed=accepted > 0 and worst <= min_tol,
        accepted=accepted,
        rejected=rejected,
        max_excess=max(worst, 0.0) if accepted else 0.0,
        witness=witness,
    )
    logger.info("Minimality check", {"passed": report.passed, "accepted": accepted, "rejected": rejected})
    return report


def _drift_problem(spec: ProblemSpec, drift: FieldMap, terminal: Optional[TerminalMap], deterministic: bool) -> ProblemSpec:
    def f_map(t, x, node, theta, y, z) -> np.ndarray:
        return drift(t, x, node)

    def g_map(t, x, node, theta, y, z) -> np.ndarray:
        return np.zeros((x.shape[0], spec.spatial_dim))

    def zero_terminal(x: np.ndarray, node) -> np.ndarray:
        return np.zeros(x.shape[0])

    return replace(
        spec,
        f=f_map,
        g=g_map,
        G=terminal or zero_terminal,
        xi=None,
        f_plus=None,
        deterministic=deterministic,
        state_free=True,
        name=f"{spec.name}-drift",
    )


def regular_potential(
    spec: ProblemSpec,
    tree: NoiseTree,
    grid: SpatialGrid,
    drift: FieldMap,
    settings: Optional[SolverSettings] = None,
    deterministic: bool = False,
) -> BackwardSolution:
    """Zero-terminal backward solve driven by a nonnegative drift: a discrete regular potential."""
    return BackwardScheme(
        _drift_problem(spec, drift, None, deterministic), tree, grid, theta=1.0, freeze_state=True, settings=settings
    ).sweep()


def with_regular_obstacle(
    spec: ProblemSpec,
    tree: NoiseTree,
    grid: SpatialGrid,
    f_plus: FieldMap,
    f_minus: FieldMap,
    terminal: Optional[TerminalMap] = None,
    settings: Optional[SolverSettings] = None,
) -> ProblemSpec:
    """Problem whose obstacle is the backward solve with drift f₊ - f₋, tabulated on tree × grid."""

    def drift(t: float, x: np.ndarray, node) -> np.ndarray:
        return np.asarray(f_plus(t, x, node)) - np.asarray(f_minus(t, x, node))

    obstacle = BackwardScheme(
        _drift_problem(spec, drift, terminal, spec.deterministic),
        tree,
        grid,
        theta=1.0,
        freeze_state=True,
        settings=settings,
    ).sweep()
    return replace(spec, xi=tabulate_process(tree, obstacle.u, grid.size), f_plus=f_plus, name=f"{spec.name}-regular")
