from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from src.grid.operators import difference_matrices
from src.grid.spatial import SpatialGrid
from src.lattice.expectation import expectation
from src.lattice.tree import NoiseTree


@dataclass
class BackwardSolution:
    """u on levels 0..N (n_k, P); v, the projection residual and β on levels 0..N-1."""

    grid: SpatialGrid
    tree: NoiseTree
    u: list[np.ndarray]
    v: list[np.ndarray]
    residual: list[np.ndarray]
    beta: Optional[list[np.ndarray]] = None
    penalty: Optional[float] = None
    inner_iterations: int = 0

    def hnorm(self) -> float:
        return hnorm(self.grid, self.tree, self.u)

    def vnorm(self) -> float:
        return vnorm(self.grid, self.tree, self.v)

    def distance(self, other: "BackwardSolution") -> float:
        """Unweighted sum of the discrete 𝓗 distance of u and the L² distance of v."""
        du = [a - b for a, b in zip(self.u, other.u)]
        dv = [a - b for a, b in zip(self.v, other.v)]
        return hnorm(self.grid, self.tree, du) + vnorm(self.grid, self.tree, dv)

    def max_residual(self) -> float:
        return float(max((np.max(r) for r in self.residual), default=0.0))

    def root(self) -> np.ndarray:
        return np.asarray(self.u[0][0])


def mean_square(grid: SpatialGrid, tree: NoiseTree, k: int, fields: np.ndarray) -> float:
    """E‖F‖² on level k for node fields of shape (n_k, ...)."""
    flat = np.asarray(fields).reshape(fields.shape[0], -1)
    return float(expectation(tree, k, np.sum(flat**2, axis=1))) * grid.cell_volume


def mean_square_gradient(grid: SpatialGrid, tree: NoiseTree, k: int, fields: np.ndarray) -> float:
    per_node = np.zeros(fields.shape[0])
    for d in difference_matrices(grid):
        per_node += np.sum((d @ np.asarray(fields).T) ** 2, axis=0)
    return float(expectation(tree, k, per_node)) * grid.cell_volume


def hnorm(grid: SpatialGrid, tree: NoiseTree, u: Sequence[np.ndarray]) -> float:
    """(max_k E‖u_k‖² + Σ_k Δt E‖∇u_k‖²)^½ with the gradient sum over implicit levels."""
    sup = max(mean_square(grid, tree, k, u[k]) for k in range(len(u)))
    energy = sum(tree.dt * mean_square_gradient(grid, tree, k, u[k]) for k in range(min(len(u), tree.steps)))
    return float(np.sqrt(sup + energy))


def vnorm(grid: SpatialGrid, tree: NoiseTree, v: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(tree.dt * mean_square(grid, tree, k, v[k]) for k in range(len(v)))))
