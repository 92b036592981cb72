from __future__ import annotations

from typing import Sequence

import numpy as np

from src.grid.operators import gradient, laplacian, laplacian_min_eigenvalue
from src.grid.solvers import solve_implicit
from src.grid.spatial import SpatialGrid


def inner(grid: SpatialGrid, u: np.ndarray, w: np.ndarray) -> float:
    return float(np.dot(u, w)) * grid.cell_volume


def face_inner(grid: SpatialGrid, g: Sequence[np.ndarray], k: Sequence[np.ndarray]) -> float:
    return sum(float(np.dot(gi, ki)) for gi, ki in zip(g, k)) * grid.cell_volume


def l2_norm(grid: SpatialGrid, u: np.ndarray) -> float:
    return float(np.sqrt(inner(grid, u, u)))


def h1_norm(grid: SpatialGrid, u: np.ndarray) -> float:
    grad = gradient(grid, u)
    return float(np.sqrt(inner(grid, u, u) + face_inner(grid, grad, grad)))


def hminus1_norm(grid: SpatialGrid, h: np.ndarray, tol: float = 1e-12) -> float:
    """‖h‖_{-1} with ‖h‖²_{-1} = ⟨w, h⟩ and (I - Δ_h) w = h."""
    w = solve_implicit(grid, laplacian(grid), 1.0, h, tol=tol)
    return float(np.sqrt(max(inner(grid, w, h), 0.0)))


def hminus1_bound_constant(grid: SpatialGrid) -> float:
    """C with ‖h‖_{-1} ≤ C‖h‖ on this grid: 1/sqrt(1 + λ_min(-Δ_h))."""
    return float(1.0 / np.sqrt(1.0 + laplacian_min_eigenvalue(grid)))
