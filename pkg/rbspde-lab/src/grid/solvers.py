from __future__ import annotations

from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from src.grid.operators import EllipticOperator
from src.grid.spatial import SpatialGrid
from src.utils.logging import get_logger


logger = get_logger(__name__)

METHODS = ("auto", "cg", "bicgstab", "direct")


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


def system_matrix(operator: EllipticOperator, shift: float | np.ndarray) -> sp.csr_matrix:
    """cI - A, with c a scalar or a per-point diagonal."""
    diag = np.broadcast_to(np.asarray(shift, dtype=float), (operator.size,))
    return (sp.diags(diag) - operator.matrix).tocsr()


def solve_implicit(
    grid: SpatialGrid,
    operator: EllipticOperator,
    shift: float | np.ndarray,
    rhs: np.ndarray,
    tol: float = 1e-10,
    method: str = "auto",
    maxiter: Optional[int] = None,
    x0: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Solve (cI - A) w = rhs.

    Conjugate gradients for symmetric A, BiCGSTAB otherwise ("auto"); both
    Jacobi-preconditioned. "direct" uses a sparse LU solve.
    """
    if method not in METHODS:
        raise ValueError(f"unknown linear method {method!r}, expected one of {METHODS}")
    if rhs.shape != (grid.size,):
        raise ValueError(f"rhs has shape {rhs.shape}, grid has {grid.size} points")
    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0.0:
        return np.zeros(grid.size)

    matrix = system_matrix(operator, shift)
    if method == "direct":
        return np.asarray(spla.spsolve(matrix.tocsc(), rhs), dtype=float)

    if method == "auto":
        method = "cg" if operator.symmetric else "bicgstab"
    cap = maxiter or 20 * grid.size + 100
    precond = sp.diags(1.0 / matrix.diagonal())
    krylov = spla.cg if method == "cg" else spla.bicgstab
    solution, info = krylov(matrix, rhs, x0=x0, rtol=tol, atol=0.0, maxiter=cap, M=precond)
    residual = float(np.linalg.norm(matrix @ solution - rhs)) / rhs_norm
    if info != 0 and residual > tol:
        logger.error("Implicit solve failed", {"method": method, "residual": residual, "info": info})
        raise SolverError(f"{method} did not converge", residual, cap if info > 0 else 0)
    return solution


def solve_constrained(
    grid: SpatialGrid,
    operator: EllipticOperator,
    shift: float | np.ndarray,
    rhs: np.ndarray,
    active: np.ndarray,
    values: np.ndarray,
    tol: float = 1e-10,
    method: str = "auto",
    x0: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Solve (cI - A) w = rhs on the free points with w = values on ``active``.

    The free block is a principal submatrix of cI - A, so it stays symmetric
    positive definite whenever the full system is.
    """
    if method not in METHODS:
        raise ValueError(f"unknown linear method {method!r}, expected one of {METHODS}")
    active = np.asarray(active, dtype=bool)
    out = np.where(active, values, 0.0).astype(float)
    free = ~active
    if not np.any(free):
        return out
    matrix = system_matrix(operator, shift)
    block = matrix[free][:, free]
    reduced = rhs[free] - matrix[free][:, active] @ out[active]
    if method == "direct" or not np.linalg.norm(reduced):
        out[free] = spla.spsolve(block.tocsc(), reduced) if np.linalg.norm(reduced) else 0.0
        return out
    if method == "auto":
        method = "cg" if operator.symmetric else "bicgstab"
    cap = 20 * int(free.sum()) + 100
    krylov = spla.cg if method == "cg" else spla.bicgstab
    guess = x0[free] if x0 is not None else None
    solution, info = krylov(block, reduced, x0=guess, rtol=tol, atol=0.0, maxiter=cap, M=sp.diags(1.0 / block.diagonal()))
    residual = float(np.linalg.norm(block @ solution - reduced)) / float(np.linalg.norm(reduced))
    if info != 0 and residual > tol:
        logger.error("Constrained solve failed", {"method": method, "residual": residual, "info": info})
        raise SolverError(f"{method} did not converge on the free set", residual, cap if info > 0 else 0)
    out[free] = solution
    return out


class FactorizedSystem:
    """Reusable LU factorization of cI - A for many right-hand sides."""

    def __init__(self, operator: EllipticOperator, shift: float | np.ndarray):
        self._solve = spla.factorized(system_matrix(operator, shift).tocsc())

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if not np.any(rhs):
            return np.zeros_like(rhs)
        return np.asarray(self._solve(rhs), dtype=float)
