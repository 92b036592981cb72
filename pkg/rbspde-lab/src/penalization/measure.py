from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from src.data.storage import save_frame
from src.grid.spatial import SpatialGrid
from src.lattice.tree import NoiseTree
from src.problem.spec import ProblemSpec


@dataclass
class DiscreteMeasure:
    """Reflecting measure μ = β·Δt·cell volume·node probability on levels 0..N-1."""

    grid: SpatialGrid
    tree: NoiseTree
    density: list[np.ndarray]

    def __post_init__(self) -> None:
        if len(self.density) != self.tree.steps:
            raise ValueError(f"density needs {self.tree.steps} levels, got {len(self.density)}")
        for k, beta in enumerate(self.density):
            if np.min(beta) < 0.0:
                raise ValueError(f"negative density {np.min(beta):.3e} on level {k}")

    def weights(self, k: int) -> np.ndarray:
        return self.tree.probabilities(k)[:, None] * self.tree.dt * self.grid.cell_volume

    def integrate(self, phi: Sequence[np.ndarray]) -> float:
        """Σ φ dμ for per-level node fields φ (levels 0..N-1)."""
        return float(sum(np.sum(self.weights(k) * phi[k] * self.density[k]) for k in range(self.tree.steps)))

    def total_mass(self) -> float:
        return float(sum(np.sum(self.weights(k) * self.density[k]) for k in range(self.tree.steps)))

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for k, beta in enumerate(self.density):
            nodes, points = np.nonzero(np.asarray(beta))
            weights = (self.weights(k) * beta)[nodes, points]
            rows.append(pd.DataFrame({
                "level": np.full(nodes.size, k),
                "node": nodes,
                "point": points,
                "weight": weights,
            }))
        return pd.concat(rows, ignore_index=True)

    def save_csv(self, path: str | Path) -> Path:
        return save_frame(self.to_frame(), path)


def obstacle_fields(spec: ProblemSpec, tree: NoiseTree, grid: SpatialGrid) -> Optional[list[np.ndarray]]:
    """ξ on every level and node, None when the problem has no obstacle."""
    if not spec.has_obstacle:
        return None
    levels = []
    for k in range(tree.steps + 1):
        if spec.deterministic:
            value = spec.evaluate("xi", tree.time(k), grid.points, tree.context(k, 0))
            levels.append(np.broadcast_to(np.array(value), (tree.level_size(k), grid.size)))
        else:
            levels.append(np.stack([
                spec.evaluate("xi", tree.time(k), grid.points, tree.context(k, i)) for i in range(tree.level_size(k))
            ]))
    return levels


def complementarity_residual(
    u: Sequence[np.ndarray], xi: Sequence[np.ndarray], mu: DiscreteMeasure
) -> tuple[float, float]:
    """(Σ |u - ξ| dμ, min(u - ξ)); the first vanishes exactly when μ charges only {u = ξ}."""
    tree = mu.tree
    if len(u) != tree.steps + 1 or len(xi) != tree.steps + 1:
        raise ValueError("u and xi need one entry per level 0..N")
    gaps = [np.asarray(u[k]) - np.asarray(xi[k]) for k in range(tree.steps + 1)]
    residual = mu.integrate([np.abs(gap) for gap in gaps[:-1]])
    return residual, float(min(np.min(gap) for gap in gaps))
