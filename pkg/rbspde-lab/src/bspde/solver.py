"""Backward induction on tree × grid.

At level k every node solves the semi-implicit step

    u_k = ū + Δt [A_θ u_k + f + div(σv + g) + extra + n(u_k - ξ)⁻]

with ū the conditional expectation and v the martingale projection of the
level-(k+1) field. A_θ blends the Laplacian (θ = 0) with div(a∇·) (θ = 1);
the state-dependent parts of f, g and the σv coupling carry the weight θ.
The penalty and any dependence on (u, ∇u) are resolved by an inner
iteration that freezes the active set {u < ξ} and the state at the current
iterate, so every inner step is one symmetric elliptic solve.
A penalty level of +inf asks for the limit problem u ≥ ξ itself: the inner
iteration becomes a primal-dual active-set method that pins u = ξ on the
active set, solves the free block and reads β off the residual.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from src.bspde.solution import BackwardSolution
from src.grid.operators import (
    EllipticOperator,
    assemble_elliptic,
    blend,
    central_gradient,
    divergence_of_points,
    laplacian,
)
from src.grid.solvers import FactorizedSystem, solve_constrained, solve_implicit
from src.grid.spatial import GridError, SpatialGrid
from src.lattice.expectation import martingale_projection
from src.lattice.tree import NodeContext, NoiseTree
from src.problem.spec import ProblemError, ProblemSpec
from src.utils.logging import get_logger


logger = get_logger(__name__)


class ConvergenceError(RuntimeError):
    def __init__(self, level: int, node: int, residual: float, iterations: int):
        super().__init__(
            f"inner iteration did not converge at level {level}, node {node}: "
            f"last change {residual:.3e} after {iterations} iterations"
        )
        self.level = level
        self.node = node
        self.residual = residual
        self.iterations = iterations


@dataclass
class SolverSettings:
    tol: float = 1e-12
    method: str = "auto"
    inner_tol: float = 1e-10
    inner_max: int = 100
    workers: int = 1


@dataclass
class _NodeResult:
    u: np.ndarray
    beta: np.ndarray
    iterations: int


def check_compatible(spec: ProblemSpec, tree: NoiseTree, grid: SpatialGrid) -> None:
    if tree.w_dim != spec.noise_dim or tree.b_dim != 0:
        raise ProblemError(f"problem needs a {spec.noise_dim}-dimensional W-tree, got noise_dim={tree.noise_dim}")
    if grid.dim != spec.spatial_dim:
        raise ProblemError(f"grid has dimension {grid.dim}, problem has {spec.spatial_dim}")
    if not (np.allclose(grid.lower, spec.lower) and np.allclose(grid.upper, spec.upper)):
        raise ProblemError("grid box differs from the problem domain")
    if abs(tree.horizon - spec.horizon) > 1e-12 * spec.horizon:
        raise ProblemError(f"tree horizon {tree.horizon} differs from the problem horizon {spec.horizon}")


def uniform_levels(levels: Optional[Sequence[np.ndarray]]) -> bool:
    if levels is None:
        return True
    return all(np.all(level == level[:1]) for level in levels)


class BackwardScheme:
    def __init__(
        self,
        spec: ProblemSpec,
        tree: NoiseTree,
        grid: SpatialGrid,
        theta: float = 1.0,
        freeze_state: bool = False,
        penalty: Optional[float] = None,
        extra: Optional[Sequence[np.ndarray]] = None,
        settings: Optional[SolverSettings] = None,
    ):
        check_compatible(spec, tree, grid)
        if not 0.0 <= theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {theta}")
        if penalty is not None and penalty < 1:
            raise ValueError(f"penalty level must be at least 1, got {penalty}")
        if extra is not None and len(extra) != tree.steps:
            raise ValueError(f"extra source needs {tree.steps} levels, got {len(extra)}")
        self.spec = spec
        self.tree = tree
        self.grid = grid
        self.theta = theta
        self.freeze_state = freeze_state or spec.state_free
        self.penalty = penalty if spec.has_obstacle else None
        self.extra = extra
        self.settings = settings or SolverSettings()
        self._laplacian = laplacian(grid)
        self._static: Optional[EllipticOperator] = None
        self._warned = False

    @property
    def nonlinear(self) -> bool:
        return not self.freeze_state and self.theta > 0.0

    def operator(self, ctx: NodeContext) -> EllipticOperator:
        if self.theta == 0.0:
            return self._laplacian
        if self.spec.static_operator and self._static is not None:
            return self._static
        t = ctx.time

        def sampler(points: np.ndarray) -> np.ndarray:
            return self.spec.evaluate("a", t, points, ctx)

        a_pts = sampler(self.grid.points)
        eigs = np.linalg.eigvalsh(0.5 * (a_pts + np.swapaxes(a_pts, 1, 2)))[:, 0]
        if np.any(eigs <= 0.0):
            p = int(np.argmin(eigs))
            logger.error("Leading coefficient not elliptic", {"t": t, "x": self.grid.points[p], "level": ctx.level})
            raise GridError(
                f"leading coefficient not elliptic at t={t}, x={self.grid.points[p].tolist()}, "
                f"level {ctx.level}, node {ctx.index} (min eigenvalue {eigs[p]:.3e})"
            )
        op = blend(self._laplacian, assemble_elliptic(self.grid, sampler), self.theta)
        if not self._warned and not op.is_monotone():
            self._warned = True
            logger.warning("Operator is not monotone, discrete comparison may fail", {"level": ctx.level})
        if self.spec.static_operator:
            self._static = op
        return op

    def terminal(self) -> np.ndarray:
        N = self.tree.steps
        if self.spec.deterministic:
            value = self.spec.evaluate("G", self.spec.horizon, self.grid.points, self.tree.context(N, 0))
            return np.broadcast_to(np.array(value), (self.tree.level_size(N), self.grid.size))
        return np.stack([
            self.spec.evaluate("G", self.spec.horizon, self.grid.points, self.tree.context(N, i))
            for i in range(self.tree.level_size(N))
        ])

    def obstacle(self, ctx: NodeContext) -> Optional[np.ndarray]:
        if not self.spec.has_obstacle:
            return None
        return self.spec.evaluate("xi", ctx.time, self.grid.points, ctx)

    def sources(self, ctx: NodeContext, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """f + div(g) with the θ-weighted state-dependent parts and σv; v is (m, P)."""
        t, x = ctx.time, self.grid.points
        f0 = self.spec.evaluate("f", t, x, ctx)
        g0 = self.spec.evaluate("g", t, x, ctx)
        if self.theta == 0.0:
            return f0 + divergence_of_points(self.grid, g0)
        sigma = self.spec.evaluate("sigma", t, x, ctx)
        flux = np.einsum("pdm,mp->pd", sigma, v)
        if self.nonlinear:
            state = (u, central_gradient(self.grid, u), v.T)
            f = self.spec.evaluate("f", t, x, ctx, state)
            g = self.spec.evaluate("g", t, x, ctx, state)
            return f0 + self.theta * (f - f0) + divergence_of_points(self.grid, g0 + self.theta * (flux + g - g0))
        return f0 + divergence_of_points(self.grid, g0 + self.theta * flux)

    def solve_node(
        self,
        k: int,
        index: int,
        ubar: np.ndarray,
        v: np.ndarray,
        warm: Optional[np.ndarray] = None,
    ) -> _NodeResult:
        ctx = self.tree.context(k, index)
        op = self.operator(ctx)
        xi = self.obstacle(ctx) if self.penalty is not None else None
        dt = self.tree.dt
        base = ubar / dt
        if self.extra is not None:
            base = base + self.extra[k][index]
        u = np.array(warm if warm is not None else ubar, dtype=float)
        src = None if self.nonlinear else self.sources(ctx, u, v)
        if xi is not None and np.isinf(self.penalty):
            return self._solve_limit(k, index, ctx, op, base, src, u, v, xi)
        n = self.penalty or 0.0
        s = self.settings
        active = None
        change = np.inf
        for iteration in range(1, s.inner_max + 1):
            if self.nonlinear:
                src = self.sources(ctx, u, v)
            if xi is not None:
                active = (u < xi).astype(float)
                shift = 1.0 / dt + n * active
                rhs = base + src + n * active * xi
            else:
                shift = 1.0 / dt
                rhs = base + src
            new = solve_implicit(self.grid, op, shift, rhs, tol=s.tol, method=s.method, x0=u)
            change = float(np.max(np.abs(new - u)))
            u = new
            settled = xi is None or np.array_equal(active, (u < xi).astype(float))
            if not self.nonlinear and settled:
                break
            if self.nonlinear and settled and change <= s.inner_tol * (1.0 + float(np.max(np.abs(u)))):
                break
        else:
            logger.error("Inner iteration failed", {"level": k, "node": index, "change": change})
            raise ConvergenceError(k, index, change, s.inner_max)
        beta = n * np.maximum(xi - u, 0.0) if xi is not None else np.zeros_like(u)
        return _NodeResult(u=u, beta=beta, iterations=iteration)

    def _solve_limit(
        self,
        k: int,
        index: int,
        ctx: NodeContext,
        op: EllipticOperator,
        base: np.ndarray,
        src: Optional[np.ndarray],
        u: np.ndarray,
        v: np.ndarray,
        xi: np.ndarray,
    ) -> _NodeResult:
        dt = self.tree.dt
        s = self.settings
        active = u < xi
        change = np.inf
        for iteration in range(1, s.inner_max + 1):
            if self.nonlinear:
                src = self.sources(ctx, u, v)
            rhs = base + src
            new = solve_constrained(self.grid, op, 1.0 / dt, rhs, active, xi, tol=s.tol, method=s.method, x0=u)
            multiplier = new / dt - op @ new - rhs
            change = float(np.max(np.abs(new - u)))
            u = new
            used = active
            active = multiplier + (xi - u) / dt > 0.0
            small = change <= s.inner_tol * (1.0 + float(np.max(np.abs(u))))
            if np.array_equal(active, used) and (small or not self.nonlinear):
                break
            # degenerate contact points may flip without moving u
            if iteration > 1 and small:
                break
        else:
            logger.error("Active-set iteration failed", {"level": k, "node": index, "change": change})
            raise ConvergenceError(k, index, change, s.inner_max)
        beta = np.where(used, np.maximum(multiplier, 0.0), 0.0)
        return _NodeResult(u=u, beta=beta, iterations=iteration)

    def sweep(self, warm_start: Optional[Sequence[np.ndarray]] = None) -> BackwardSolution:
        tree, grid = self.tree, self.grid
        N, m, P = tree.steps, self.spec.noise_dim, grid.size
        fast = self.spec.deterministic and uniform_levels(self.extra) and uniform_levels(warm_start)
        u: list = [None] * (N + 1)
        v: list = [None] * N
        residual: list = [None] * N
        beta: list = [None] * N
        u[N] = self.terminal()
        iterations = 0
        pool = ThreadPoolExecutor(max_workers=self.settings.workers) if self.settings.workers > 1 and not fast else None
        try:
            for k in range(N - 1, -1, -1):
                n_k = tree.level_size(k)
                if fast:
                    warm = warm_start[k][0] if warm_start is not None else None
                    result = self.solve_node(k, 0, np.asarray(u[k + 1][0]), np.zeros((m, P)), warm)
                    u[k] = np.broadcast_to(result.u, (n_k, P))
                    beta[k] = np.broadcast_to(result.beta, (n_k, P))
                    v[k] = np.broadcast_to(np.zeros((m, P)), (n_k, m, P))
                    residual[k] = np.zeros(n_k)
                    iterations += result.iterations
                    continue
                proj = martingale_projection(tree, k, u[k + 1], weight=grid.cell_volume)
                v[k], residual[k] = proj.v, proj.residual

                def run(i: int, level: int = k, ubar: np.ndarray = proj.mean, vk: np.ndarray = proj.v) -> _NodeResult:
                    warm = warm_start[level][i] if warm_start is not None else None
                    return self.solve_node(level, i, ubar[i], vk[i], warm)

                results = list(pool.map(run, range(n_k))) if pool is not None else [run(i) for i in range(n_k)]
                u[k] = np.stack([r.u for r in results])
                beta[k] = np.stack([r.beta for r in results])
                iterations += sum(r.iterations for r in results)
        finally:
            if pool is not None:
                pool.shutdown()

        logger.info("Backward sweep finished", {
            "levels": N, "theta": self.theta, "penalty": self.penalty, "fast_path": fast, "inner_iterations": iterations,
        })
        return BackwardSolution(
            grid=grid,
            tree=tree,
            u=u,
            v=v,
            residual=residual,
            beta=beta if self.penalty is not None else None,
            penalty=self.penalty,
            inner_iterations=iterations,
        )


def solve_linear_bspde(
    spec: ProblemSpec,
    tree: NoiseTree,
    grid: SpatialGrid,
    settings: Optional[SolverSettings] = None,
) -> BackwardSolution:
    """Linear backward solve: obstacle ignored, f and g frozen at zero state."""
    return BackwardScheme(spec, tree, grid, theta=1.0, freeze_state=True, settings=settings).sweep()


def solve_along_path(
    spec: ProblemSpec,
    tree: NoiseTree,
    grid: SpatialGrid,
    leaf: int,
    system: Optional[FactorizedSystem] = None,
) -> list[np.ndarray]:
    """Deterministic backward heat solve along the path to a terminal node (a = I, σ = 0)."""
    N, dt = tree.steps, tree.dt
    path = tree.ancestors(N, leaf)
    system = system or FactorizedSystem(laplacian(grid), 1.0 / dt)
    out: list = [None] * (N + 1)
    out[N] = np.asarray(spec.evaluate("G", spec.horizon, grid.points, tree.context(N, leaf)), dtype=float)
    for k in range(N - 1, -1, -1):
        ctx = tree.context(k, int(path[k]))
        src = spec.evaluate("f", ctx.time, grid.points, ctx) + divergence_of_points(
            grid, spec.evaluate("g", ctx.time, grid.points, ctx)
        )
        out[k] = system.solve(out[k + 1] / dt + src)
    return out
