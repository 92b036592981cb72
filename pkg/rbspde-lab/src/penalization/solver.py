from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from src.bspde.solution import BackwardSolution
from src.bspde.solver import BackwardScheme, SolverSettings
from src.grid.spatial import SpatialGrid
from src.lattice.tree import NoiseTree
from src.monitoring.journal import DiagnosticsJournal
from src.penalization.measure import DiscreteMeasure, complementarity_residual, obstacle_fields
from src.problem.spec import ProblemError, ProblemSpec
from src.utils.logging import get_logger
from src.utils.mathutils import neg_part, observed_orders


logger = get_logger(__name__)

DEFAULT_SCHEDULE = tuple(2**j for j in range(13))
LIMIT = float("inf")

HISTORY_COLUMNS = (
    "n",
    "penalty_mass",
    "mass_ratio",
    "cauchy",
    "complementarity",
    "min_gap",
    "violation",
    "measure_mass",
    "inner_iterations",
)


class MonotonicityError(RuntimeError):
    def __init__(self, n_low: float, n_high: float, violation: float):
        super().__init__(
            f"penalized solutions not monotone in n: u_{n_low:g} exceeds u_{n_high:g} by {violation:.3e}"
        )
        self.n_low = n_low
        self.n_high = n_high
        self.violation = violation


@dataclass
class PenaltyTolerances:
    mono: float = 1e-10
    comp: float = 1e-3
    mass_ratio: float = 10.0


@dataclass
class PenalizedRun:
    spec: ProblemSpec
    schedule: tuple[float, ...]
    history: pd.DataFrame
    final: BackwardSolution
    measure: DiscreteMeasure
    obstacle: list[np.ndarray]
    tolerances: PenaltyTolerances = field(default_factory=PenaltyTolerances)
    last_penalized: Optional[BackwardSolution] = None

    @property
    def complementarity(self) -> float:
        return float(self.history["complementarity"].iloc[-1])

    @property
    def mass_bounded(self) -> bool:
        return bool(self.history["mass_ratio"].max() <= self.tolerances.mass_ratio)

    @property
    def penalized(self) -> pd.DataFrame:
        """History rows of finite penalty levels."""
        return self.history[np.isfinite(self.history["n"].to_numpy(dtype=float))]

    @property
    def cauchy_decreasing(self) -> bool:
        """Successive distances shrink once the penalty dominates the time step (nΔt ≥ 1)."""
        rows = self.penalized
        dominated = rows[rows["n"] * self.final.tree.dt >= 1.0]
        distances = dominated["cauchy"].dropna().to_numpy()
        if distances.size < 2:
            return True
        return bool(np.all(np.diff(distances) <= 1e-12 * (1.0 + distances[:-1])))

    def violation_rate(self) -> np.ndarray:
        """Observed order of max(ξ - u)⁺ in 1/n along the schedule."""
        rows = self.penalized
        return np.asarray(observed_orders(rows["violation"].to_numpy(), 1.0 / rows["n"].to_numpy()))

    def checks(self) -> dict[str, bool]:
        return {
            "penalty_mass_bounded": self.mass_bounded,
            "cauchy_decreasing": self.cauchy_decreasing,
            "complementarity": self.complementarity <= self.tolerances.comp,
        }


def solve_penalized(
    spec: ProblemSpec,
    n: float,
    tree: NoiseTree,
    grid: SpatialGrid,
    settings: Optional[SolverSettings] = None,
    warm_start: Optional[Sequence[np.ndarray]] = None,
    theta: float = 1.0,
    extra: Optional[Sequence[np.ndarray]] = None,
) -> BackwardSolution:
    if not spec.has_obstacle:
        raise ProblemError("penalization needs an obstacle xi")
    scheme = BackwardScheme(spec, tree, grid, theta=theta, penalty=n, extra=extra, settings=settings)
    return scheme.sweep(warm_start)


def penalty_mass(sol: BackwardSolution, xi: Sequence[np.ndarray]) -> float:
    """n · Σ_k Δt E‖(u_n - ξ)⁻‖², NaN for the limit level."""
    if sol.penalty is not None and np.isinf(sol.penalty):
        return float("nan")
    tree, grid = sol.tree, sol.grid
    total = 0.0
    for k in range(tree.steps):
        gap = neg_part(np.asarray(sol.u[k]) - np.asarray(xi[k]))
        total += tree.dt * float(np.dot(tree.probabilities(k), np.sum(gap**2, axis=1)))
    return float(sol.penalty or 0.0) * total * grid.cell_volume


def _validate_schedule(schedule: Sequence[float]) -> tuple[float, ...]:
    values = tuple(float(n) for n in schedule)
    if not values:
        raise ValueError("penalty schedule is empty")
    if values[0] < 1:
        raise ValueError(f"penalty levels start at 1, got {values[0]}")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError(f"penalty schedule must be strictly increasing: {values}")
    if any(np.isinf(n) for n in values[:-1]) or np.isnan(values).any():
        raise ValueError(f"only the last penalty level may be infinite: {values}")
    return values


def run_penalization(
    spec: ProblemSpec,
    tree: NoiseTree,
    grid: SpatialGrid,
    schedule: Sequence[float] = DEFAULT_SCHEDULE,
    tolerances: Optional[PenaltyTolerances] = None,
    settings: Optional[SolverSettings] = None,
    theta: float = 1.0,
    extra: Optional[Sequence[np.ndarray]] = None,
    warm_start: Optional[Sequence[np.ndarray]] = None,
    journal: Optional[DiagnosticsJournal] = None,
) -> PenalizedRun:
    """Penalized solves along an increasing schedule with warm starts.

    A final level of LIMIT solves the obstacle problem itself, seeded from
    the last finite level.

    Raises MonotonicityError when u_n exceeds u_{n'} (n < n') by more than
    the monotonicity tolerance.
    """
    levels = _validate_schedule(schedule)
    tols = tolerances or PenaltyTolerances()
    xi = obstacle_fields(spec, tree, grid)
    if xi is None:
        raise ProblemError("penalization needs an obstacle xi")

    rows = []
    previous: Optional[BackwardSolution] = None
    reference_mass = 0.0
    last_penalized: Optional[BackwardSolution] = None
    warm = warm_start
    for n in levels:
        sol = solve_penalized(spec, n, tree, grid, settings, warm, theta, extra)
        if previous is not None:
            violation = max(float(np.max(np.asarray(a) - np.asarray(b))) for a, b in zip(previous.u, sol.u))
            if violation > tols.mono:
                logger.error("Monotonicity violated", {"n_low": previous.penalty, "n_high": n, "violation": violation})
                raise MonotonicityError(previous.penalty, n, violation)
        mass = penalty_mass(sol, xi)
        if reference_mass == 0.0 and mass > 0.0:
            reference_mass = mass
        measure = DiscreteMeasure(grid, tree, [np.asarray(b) for b in sol.beta])
        comp, min_gap = complementarity_residual(sol.u, xi, measure)
        row = {
            "n": n,
            "penalty_mass": mass,
            "mass_ratio": mass / reference_mass if reference_mass > 0.0 else (0.0 if mass == 0.0 else float("nan")),
            "cauchy": sol.distance(previous) if previous is not None else float("nan"),
            "complementarity": comp,
            "min_gap": min_gap,
            "violation": max(-min_gap, 0.0),
            "measure_mass": measure.total_mass(),
            "inner_iterations": sol.inner_iterations,
        }
        rows.append(row)
        if journal is not None:
            journal.append(row)
        logger.info("Penalty level finished", row)
        if np.isfinite(n):
            last_penalized = sol
        previous = sol
        warm = sol.u

    history = pd.DataFrame(rows, columns=list(HISTORY_COLUMNS))
    return PenalizedRun(
        spec=spec,
        schedule=levels,
        history=history,
        final=previous,
        measure=measure,
        obstacle=xi,
        tolerances=tols,
        last_penalized=last_penalized,
    )
