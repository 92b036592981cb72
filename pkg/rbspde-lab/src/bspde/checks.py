from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from src.bspde.solution import BackwardSolution, mean_square
from src.bspde.solver import BackwardScheme, SolverSettings, solve_along_path, solve_linear_bspde, uniform_levels
from src.grid.norms import l2_norm
from src.grid.operators import laplacian
from src.grid.solvers import FactorizedSystem
from src.grid.spatial import SpatialGrid
from src.lattice.expectation import cond_expect, expectation
from src.lattice.tree import LatticeError, NoiseTree
from src.problem.spec import ProblemError, ProblemSpec
from src.utils.logging import get_logger


logger = get_logger(__name__)


@dataclass
class DualityReport:
    residual: float
    per_level: np.ndarray
    paths: int


@dataclass
class EnergyReport:
    residuals: np.ndarray
    cross_term: float
    continuity_jump: float

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residuals))


def _require_heat_setting(spec: ProblemSpec, tree: NoiseTree, grid: SpatialGrid) -> None:
    eye = np.eye(spec.spatial_dim)
    for k in range(tree.steps + 1):
        for i in range(tree.level_size(k)):
            ctx = tree.context(k, i)
            a = spec.evaluate("a", ctx.time, grid.points, ctx)
            sigma = spec.evaluate("sigma", ctx.time, grid.points, ctx)
            if not np.allclose(a, eye, atol=1e-14) or np.any(sigma != 0.0):
                raise ProblemError("duality check needs a = I and sigma = 0", {"level": k, "node": i})


def duality_check(
    spec: ProblemSpec,
    tree: NoiseTree,
    grid: SpatialGrid,
    settings: Optional[SolverSettings] = None,
    solution: Optional[BackwardSolution] = None,
) -> DualityReport:
    """Per-path deterministic solves averaged back level by level against the backward solve."""
    if tree.recombining:
        raise LatticeError("duality check enumerates paths and needs a non-recombining tree")
    _require_heat_setting(spec, tree, grid)
    sol = solution or solve_linear_bspde(spec, tree, grid, settings)
    N = tree.steps
    leaves = tree.level_size(N)
    system = FactorizedSystem(laplacian(grid), 1.0 / tree.dt)
    per_path = [solve_along_path(spec, tree, grid, leaf, system) for leaf in range(leaves)]

    per_level = np.zeros(N + 1)
    for k in range(N + 1):
        averaged = np.stack([path[k] for path in per_path])
        for j in range(N - 1, k - 1, -1):
            averaged = cond_expect(tree, j, averaged)
        per_level[k] = max(l2_norm(grid, averaged[i] - sol.u[k][i]) for i in range(tree.level_size(k)))
    report = DualityReport(residual=float(np.max(per_level)), per_level=per_level, paths=leaves)
    logger.info("Duality check", {"residual": report.residual, "paths": leaves})
    return report


def energy_identity_residual(
    sol: BackwardSolution,
    spec: ProblemSpec,
    theta: float = 1.0,
    freeze_state: bool = True,
) -> EnergyReport:
    """Discrete Itô balance for ‖u‖² along the backward solution.

    residual_k = |E‖u_k‖² - E‖u_N‖² - Σ_{j≥k} Δt E[2⟨u_j, A u_j + f + div(σv + g) + β⟩]
                 + Σ_{j≥k} Δt E‖v_j‖²|
    """
    tree, grid = sol.tree, sol.grid
    N, dt = tree.steps, tree.dt
    scheme = BackwardScheme(spec, tree, grid, theta=theta, freeze_state=freeze_state)
    sq = np.array([mean_square(grid, tree, k, sol.u[k]) for k in range(N + 1)])
    drift = np.zeros(N)
    vsq = np.zeros(N)
    cross = 0.0
    for j in range(N):
        levels = [sol.u[j], sol.v[j]] + ([sol.beta[j]] if sol.beta is not None else [])
        uniform = spec.deterministic and uniform_levels([np.asarray(level) for level in levels])
        nodes = 1 if uniform else tree.level_size(j)
        per_node = np.zeros(nodes)
        for i in range(nodes):
            ctx = tree.context(j, i)
            u = np.asarray(sol.u[j][i])
            total = scheme.operator(ctx) @ u + scheme.sources(ctx, u, np.asarray(sol.v[j][i]))
            if sol.beta is not None:
                total = total + sol.beta[j][i]
            per_node[i] = 2.0 * float(np.dot(u, total)) * grid.cell_volume
        if nodes < tree.level_size(j):
            per_node = np.full(tree.level_size(j), per_node[0])
        drift[j] = float(expectation(tree, j, per_node))
        vsq[j] = mean_square(grid, tree, j, sol.v[j])

        children = np.asarray(sol.u[j + 1])[tree.children(j)]
        ubar = cond_expect(tree, j, sol.u[j + 1])
        increments = children - ubar[:, None, :]
        pairing = np.einsum("np,nbp->n", ubar, increments) / tree.branching * grid.cell_volume
        cross = max(cross, abs(float(expectation(tree, j, pairing))))

    tail_drift = np.concatenate([np.cumsum(drift[::-1])[::-1], [0.0]])
    tail_v = np.concatenate([np.cumsum(vsq[::-1])[::-1], [0.0]])
    residuals = np.abs(sq - sq[N] - dt * tail_drift + dt * tail_v)
    report = EnergyReport(
        residuals=residuals,
        cross_term=cross,
        continuity_jump=float(np.max(np.abs(np.diff(sq)))) if N > 0 else 0.0,
    )
    logger.info("Energy identity", {"max_residual": report.max_residual, "cross_term": cross})
    return report


def dominating_norm(
    spec: ProblemSpec,
    tree: NoiseTree,
    grid: SpatialGrid,
    settings: Optional[SolverSettings] = None,
) -> float:
    """‖ǔ‖_𝓗 + ‖v̌‖ for the linear backward solve with terminal value ξ̌(T) and zero drift; 0 without ξ̌."""
    if spec.xi_dom is None:
        return 0.0

    def f_zero(t, x, node, theta, y, z) -> np.ndarray:
        return np.zeros(x.shape[0])

    def g_zero(t, x, node, theta, y, z) -> np.ndarray:
        return np.zeros((x.shape[0], spec.spatial_dim))

    def terminal(x: np.ndarray, node) -> np.ndarray:
        return spec.xi_dom(spec.horizon, x, node)

    data = replace(spec, f=f_zero, g=g_zero, G=terminal, xi=None, xi_dom=None, f_plus=None, state_free=True,
                   name=f"{spec.name}-dominating")
    sol = solve_linear_bspde(data, tree, grid, settings)
    return sol.hnorm() + sol.vnorm()


def apriori_ratio(sol: BackwardSolution, spec: ProblemSpec, dominating: float = 0.0) -> float:
    """(‖u‖²_𝓗 + ‖v‖²) / (‖ξ̌‖² + E‖G‖² + Σ Δt E(‖f₀‖² + ‖g₀‖²)).

    ``dominating`` is the backward-solve norm of ξ̌ from :func:`dominating_norm`.
    """
    tree, grid = sol.tree, sol.grid
    data = dominating**2 + mean_square(grid, tree, tree.steps, sol.u[tree.steps])
    for k in range(tree.steps):
        f0 = []
        g0 = []
        for i in range(tree.level_size(k)):
            ctx = tree.context(k, i)
            f0.append(spec.evaluate("f", ctx.time, grid.points, ctx))
            g0.append(spec.evaluate("g", ctx.time, grid.points, ctx))
        data += tree.dt * (mean_square(grid, tree, k, np.stack(f0)) + mean_square(grid, tree, k, np.stack(g0)))
    if data == 0.0:
        return 0.0
    size = sol.hnorm() ** 2 + sol.vnorm() ** 2
    return float(size / data)

