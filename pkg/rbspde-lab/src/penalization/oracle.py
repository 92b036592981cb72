"""Projected SOR for the discrete obstacle problem on a deterministic problem.

Per level the linear complementarity problem

    M u ≥ r,  u ≥ ξ,  (M u - r)·(u - ξ) = 0,  M = I/Δt - A,  r = u_{k+1}/Δt + f + div g

is solved by projected Gauss-Seidel sweeps with over-relaxation. It shares the
grid and operator with the penalized scheme but not the penalty, so it serves
as an independent reference for the n → ∞ limit.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from src.bspde.solver import BackwardScheme
from src.grid.solvers import SolverError
from src.grid.spatial import SpatialGrid
from src.lattice.tree import NoiseTree
from src.problem.spec import ProblemError, ProblemSpec
from src.utils.logging import get_logger


logger = get_logger(__name__)


def optimal_omega(matrix: sp.spmatrix) -> float:
    """Young's relaxation factor from the Jacobi spectral radius of a symmetric M-matrix."""
    diag = matrix.diagonal()
    scale = sp.diags(1.0 / np.sqrt(diag))
    jacobi = sp.identity(matrix.shape[0]) - scale @ matrix @ scale
    if matrix.shape[0] <= 2000:
        radius = float(np.max(np.abs(np.linalg.eigvalsh(jacobi.toarray()))))
    else:
        radius = float(abs(spla.eigsh(jacobi, k=1, which="LM", return_eigenvectors=False)[0]))
    radius = min(radius, 1.0 - 1e-12)
    return 2.0 / (1.0 + np.sqrt(1.0 - radius**2))


def psor(
    matrix: sp.csr_matrix,
    rhs: np.ndarray,
    lower: np.ndarray,
    x0: np.ndarray,
    omega: float,
    tol: float,
    max_iter: int,
) -> tuple[np.ndarray, int]:
    """One LCP solve; returns the solution and the sweep count."""
    indptr, indices, data = matrix.indptr, matrix.indices, matrix.data
    diag = matrix.diagonal()
    x = np.maximum(np.array(x0, dtype=float), lower)
    size = x.size
    for sweep in range(1, max_iter + 1):
        change = 0.0
        for i in range(size):
            row = slice(indptr[i], indptr[i + 1])
            residual = rhs[i] - np.dot(data[row], x[indices[row]])
            new = max(lower[i], x[i] + omega * residual / diag[i])
            change = max(change, abs(new - x[i]))
            x[i] = new
        if change <= tol:
            return x, sweep
    raise SolverError("projected SOR did not converge", change, max_iter)


def psor_obstacle(
    spec: ProblemSpec,
    tree: NoiseTree,
    grid: SpatialGrid,
    omega: Optional[float] = None,
    tol: float = 1e-12,
    max_iter: int = 20000,
) -> np.ndarray:
    """Reference obstacle solution, shape (N + 1, P), levels 0..N."""
    if not spec.deterministic:
        raise ProblemError("projected SOR reference needs a deterministic problem")
    if not spec.state_free:
        raise ProblemError("projected SOR reference needs f and g independent of the state")
    if not spec.has_obstacle:
        raise ProblemError("projected SOR reference needs an obstacle xi")
    scheme = BackwardScheme(spec, tree, grid, theta=1.0, freeze_state=True)
    N, dt = tree.steps, tree.dt
    levels = np.zeros((N + 1, grid.size))
    levels[N] = scheme.terminal()[0]
    zero_v = np.zeros((spec.noise_dim, grid.size))
    relax = omega
    sweeps = 0
    for k in range(N - 1, -1, -1):
        ctx = tree.context(k, 0)
        op = scheme.operator(ctx)
        matrix = (sp.identity(grid.size) / dt - op.matrix).tocsr()
        if relax is None:
            relax = optimal_omega(matrix)
        rhs = levels[k + 1] / dt + scheme.sources(ctx, levels[k + 1], zero_v)
        xi = scheme.obstacle(ctx)
        levels[k], used = psor(matrix, rhs, xi, levels[k + 1], relax, tol, max_iter)
        sweeps += used
    logger.info("Projected SOR finished", {"levels": N, "omega": relax, "sweeps": sweeps})
    return levels
