"""θ-continuation from the Laplacian-leading problem to the full quasilinear one.

At θ = 0 the leading part is the Laplacian and f, g are frozen at zero
state; this instance is a plain penalization run. Going from an accepted
θ₀ to θ = θ₀ + Δθ, the solution map plugs the current iterate (u₁, v₁)
into the correction

    (θ - θ₀)[(A_a - Δ)u₁ + div(σv₁ + g(u₁, ∇u₁, v₁) - g₀) + f(u₁, ∇u₁, v₁) - f₀]

and solves the θ₀-structured reflected problem with that extra source. A
fixed point of the map solves the θ problem. Picard iterations stop at
picard_tol; an observed contraction ratio at or above ratio_limit halves
the step.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from src.bspde.solution import BackwardSolution
from src.bspde.solver import BackwardScheme, SolverSettings
from src.data.storage import save_frame
from src.grid.operators import laplacian
from src.grid.spatial import SpatialGrid
from src.lattice.tree import NoiseTree
from src.monitoring.journal import DiagnosticsJournal
from src.penalization.measure import DiscreteMeasure, complementarity_residual, obstacle_fields
from src.penalization.solver import DEFAULT_SCHEDULE, PenalizedRun, PenaltyTolerances, run_penalization
from src.problem.spec import ProblemSpec
from src.utils.logging import get_logger


logger = get_logger(__name__)

TRACE_COLUMNS = ("theta0", "theta", "iteration", "residual", "ratio")


class ContinuationError(RuntimeError):
    def __init__(self, theta: float, step: float, ratio: float):
        super().__init__(
            f"contraction unattainable, check the parabolicity margin lambda - kappa - rho'*beta "
            f"(stalled at θ={theta:.6g}, step {step:.3g}, ratio {ratio:.3g})"
        )
        self.theta = theta
        self.step = step
        self.ratio = ratio


@dataclass
class ContinuationSettings:
    theta_step: float = 0.5
    theta_min: float = 1.0 / 64.0
    picard_tol: float = 1e-8
    picard_max: int = 50
    ratio_limit: float = 0.9


@dataclass
class ContinuationTrace:
    breakpoints: list[float] = field(default_factory=lambda: [0.0])
    rows: list[dict] = field(default_factory=list)
    halvings: list[float] = field(default_factory=list)

    def _accepted_rows(self) -> dict[float, list[dict]]:
        steps = set(zip(self.breakpoints, self.breakpoints[1:]))
        out: dict[float, list[dict]] = {theta: [] for theta in self.breakpoints[1:]}
        for row in self.rows:
            if (row["theta0"], row["theta"]) in steps:
                out[row["theta"]].append(row)
        return out

    def accepted_ratios(self) -> dict[float, float]:
        """Largest observed contraction ratio per accepted breakpoint (0 when one iteration sufficed)."""
        return {
            theta: max((row["ratio"] for row in rows if np.isfinite(row["ratio"])), default=0.0)
            for theta, rows in self._accepted_rows().items()
        }

    def picard_counts(self) -> dict[float, int]:
        return {theta: len(rows) for theta, rows in self._accepted_rows().items()}

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=list(TRACE_COLUMNS))

    def save_csv(self, path: str | Path) -> Path:
        return save_frame(self.to_frame(), path)


@dataclass
class ContinuationResult:
    solution: BackwardSolution
    measure: Optional[DiscreteMeasure]
    trace: ContinuationTrace
    run0: Optional[PenalizedRun] = None
    penalty: Optional[float] = None


def theta_independent(spec: ProblemSpec, tree: NoiseTree, grid: SpatialGrid) -> bool:
    """True when a = I, σ = 0 and f, g ignore the state, so every θ gives the same problem."""
    if not (spec.state_free and spec.static_operator):
        return False
    ctx = tree.context(0, 0)
    a = spec.evaluate("a", 0.0, grid.points, ctx)
    sigma = spec.evaluate("sigma", 0.0, grid.points, ctx)
    return bool(np.allclose(a, np.eye(spec.spatial_dim), atol=1e-14) and not np.any(sigma))


class _SolutionMap:
    def __init__(
        self,
        spec: ProblemSpec,
        tree: NoiseTree,
        grid: SpatialGrid,
        penalty: Optional[float],
        settings: SolverSettings,
    ):
        self.spec = spec
        self.tree = tree
        self.grid = grid
        self.penalty = penalty
        self.settings = settings
        self._full = BackwardScheme(spec, tree, grid, theta=1.0, settings=settings)
        self._base = BackwardScheme(spec, tree, grid, theta=0.0, settings=settings)
        self._laplacian = laplacian(grid)

    def correction(self, current: BackwardSolution, weight: float) -> list[np.ndarray]:
        tree = self.tree
        out = []
        for k in range(tree.steps):
            level = np.empty((tree.level_size(k), self.grid.size))
            for i in range(tree.level_size(k)):
                ctx = tree.context(k, i)
                u = np.asarray(current.u[k][i])
                v = np.asarray(current.v[k][i])
                leading = self._full.operator(ctx) @ u - self._laplacian @ u
                level[i] = leading + self._full.sources(ctx, u, v) - self._base.sources(ctx, u, v)
            out.append(weight * level)
        return out

    def solve(self, theta: float, extra: Optional[Sequence[np.ndarray]], warm: Optional[Sequence[np.ndarray]]):
        scheme = BackwardScheme(
            self.spec, self.tree, self.grid, theta=theta, penalty=self.penalty, extra=extra, settings=self.settings
        )
        return scheme.sweep(warm)


def _perturbed(sol: BackwardSolution, scale: float, rng: np.random.Generator) -> BackwardSolution:
    u = [np.asarray(level) + scale * rng.standard_normal(np.shape(level)) for level in sol.u[:-1]]
    u.append(sol.u[-1])
    return BackwardSolution(grid=sol.grid, tree=sol.tree, u=u, v=list(sol.v), residual=sol.residual, beta=sol.beta,
                            penalty=sol.penalty)


def solve_rbspde(
    spec: ProblemSpec,
    tree: NoiseTree,
    grid: SpatialGrid,
    schedule: Sequence[float] = DEFAULT_SCHEDULE,
    settings: Optional[ContinuationSettings] = None,
    solver: Optional[SolverSettings] = None,
    tolerances: Optional[PenaltyTolerances] = None,
    perturbation: float = 0.0,
    seed: int = 0,
    resume: Optional[tuple[float, BackwardSolution]] = None,
    journal: Optional[DiagnosticsJournal] = None,
) -> ContinuationResult:
    """Full reflected quasilinear solve by θ-continuation.

    ``resume`` restarts from an accepted (θ, solution) checkpoint;
    ``perturbation`` adds Gaussian noise of that size to the first Picard
    guess of every step.
    """
    cfg = settings or ContinuationSettings()
    solver = solver or SolverSettings()
    penalty = float(schedule[-1]) if spec.has_obstacle else None
    trace = ContinuationTrace()
    rng = np.random.default_rng(seed)
    run0: Optional[PenalizedRun] = None

    if resume is not None:
        theta0, accepted = resume
        trace.breakpoints = [float(theta0)]
    else:
        theta0 = 0.0
        if spec.has_obstacle:
            run0 = run_penalization(spec, tree, grid, schedule, tolerances, solver, theta=0.0, journal=journal)
            accepted = run0.final
        else:
            accepted = BackwardScheme(spec, tree, grid, theta=0.0, settings=solver).sweep()

    mapping = _SolutionMap(spec, tree, grid, penalty, solver)
    if theta0 < 1.0 and theta_independent(spec, tree, grid):
        trace.breakpoints.append(1.0)
        logger.info("Problem does not depend on theta, jumping to theta = 1", {"theta0": theta0})
        return _finish(spec, tree, grid, accepted, trace, run0, penalty)

    step = cfg.theta_step
    while theta0 < 1.0:
        theta = min(1.0, theta0 + step)
        current = _perturbed(accepted, perturbation, rng) if perturbation > 0.0 else accepted
        previous_distance: Optional[float] = None
        ratio = float("nan")
        converged = False
        for iteration in range(1, cfg.picard_max + 1):
            extra = mapping.correction(current, theta - theta0)
            new = mapping.solve(theta0, extra, current.u)
            distance = new.distance(current)
            if previous_distance is not None:
                ratio = distance / previous_distance if previous_distance > 0.0 else 0.0
            trace.rows.append({"theta0": theta0, "theta": theta, "iteration": iteration, "residual": distance, "ratio": ratio})
            current = new
            previous_distance = distance
            if distance <= cfg.picard_tol:
                converged = True
                break
            if np.isfinite(ratio) and ratio >= cfg.ratio_limit:
                break
        if converged:
            accepted = current
            theta0 = theta
            trace.breakpoints.append(theta)
            logger.info("Theta step accepted", {"theta": theta, "step": step, "picard": iteration, "ratio": ratio})
            continue
        trace.halvings.append(theta0)
        step /= 2.0
        logger.warning("Theta step halved", {"theta0": theta0, "step": step, "ratio": ratio})
        if step < cfg.theta_min:
            logger.error("Continuation stalled", {"theta0": theta0, "step": step, "ratio": ratio})
            raise ContinuationError(theta0, step, ratio)

    return _finish(spec, tree, grid, accepted, trace, run0, penalty)


def _finish(
    spec: ProblemSpec,
    tree: NoiseTree,
    grid: SpatialGrid,
    solution: BackwardSolution,
    trace: ContinuationTrace,
    run0: Optional[PenalizedRun],
    penalty: Optional[float],
) -> ContinuationResult:
    measure = None
    if solution.beta is not None:
        measure = DiscreteMeasure(grid, tree, [np.asarray(b) for b in solution.beta])
        comp, min_gap = complementarity_residual(solution.u, obstacle_fields(spec, tree, grid), measure)
        logger.info("Reflected solve finished", {"complementarity": comp, "min_gap": min_gap, "mass": measure.total_mass()})
    return ContinuationResult(solution=solution, measure=measure, trace=trace, run0=run0, penalty=penalty)
