"""Difference operators on a SpatialGrid.

Gradients live on cell faces: along axis i there are counts[i] + 1 faces,
the outermost ones joining an interior point to the zero boundary value.
Divergence is defined as the exact negative transpose of the gradient, so
the discrete pairing ⟨u, div g⟩ = -⟨grad u, g⟩ holds to round-off and
div∘grad is the Dirichlet (2d+1)-point Laplacian.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from src.grid.spatial import GridError, SpatialGrid


ASampler = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class EllipticOperator:
    matrix: sp.csr_matrix
    symmetric: bool

    def __matmul__(self, u: np.ndarray) -> np.ndarray:
        return self.matrix @ u

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.matrix @ u

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def is_monotone(self) -> bool:
        """Off-diagonal entries nonnegative, i.e. cI - A is an M-matrix."""
        off = self.matrix - sp.diags(self.matrix.diagonal())
        return bool(off.nnz == 0 or off.data.min() >= -1e-14 * abs(self.matrix.diagonal()).max())


def blend(first: EllipticOperator, second: EllipticOperator, theta: float) -> EllipticOperator:
    """(1 - θ)·first + θ·second."""
    if theta == 0.0:
        return first
    if theta == 1.0:
        return second
    matrix = ((1.0 - theta) * first.matrix + theta * second.matrix).tocsr()
    return EllipticOperator(matrix, first.symmetric and second.symmetric)


def _along_axis(block: sp.spmatrix, counts: Sequence[int], axis: int) -> sp.csr_matrix:
    before = int(np.prod(counts[:axis])) if axis > 0 else 1
    after = int(np.prod(counts[axis + 1:])) if axis + 1 < len(counts) else 1
    return sp.kron(sp.identity(before), sp.kron(block, sp.identity(after)), format="csr")


@lru_cache(maxsize=32)
def difference_matrices(grid: SpatialGrid) -> tuple[sp.csr_matrix, ...]:
    """Forward differences D_i: points -> faces along each axis."""
    mats = []
    for i, n in enumerate(grid.counts):
        h = grid.spacing[i]
        d1 = sp.diags([-np.ones(n), np.ones(n)], [-1, 0], shape=(n + 1, n)) / h
        mats.append(_along_axis(d1, grid.counts, i))
    return tuple(mats)


@lru_cache(maxsize=32)
def _face_to_point(grid: SpatialGrid) -> tuple[sp.csr_matrix, ...]:
    mats = []
    for i, n in enumerate(grid.counts):
        r1 = sp.diags([0.5 * np.ones(n), 0.5 * np.ones(n)], [0, 1], shape=(n, n + 1))
        mats.append(_along_axis(r1, grid.counts, i))
    return tuple(mats)


@lru_cache(maxsize=32)
def _point_to_face(grid: SpatialGrid) -> tuple[sp.csr_matrix, ...]:
    mats = []
    for i, n in enumerate(grid.counts):
        f1 = sp.diags([0.5 * np.ones(n), 0.5 * np.ones(n)], [-1, 0], shape=(n + 1, n)).tolil()
        # boundary faces copy their single interior neighbour
        f1[0, 0] = 1.0
        f1[n, n - 1] = 1.0
        mats.append(_along_axis(f1.tocsr(), grid.counts, i))
    return tuple(mats)


@lru_cache(maxsize=32)
def _central_differences(grid: SpatialGrid) -> tuple[sp.csr_matrix, ...]:
    return tuple((r @ d).tocsr() for r, d in zip(_face_to_point(grid), difference_matrices(grid)))


def gradient(grid: SpatialGrid, u: np.ndarray) -> list[np.ndarray]:
    return [d @ u for d in difference_matrices(grid)]


def divergence(grid: SpatialGrid, g: Sequence[np.ndarray]) -> np.ndarray:
    if len(g) != grid.dim:
        raise GridError(f"divergence needs {grid.dim} face fields, got {len(g)}")
    out = np.zeros(grid.size)
    for d, gi in zip(difference_matrices(grid), g):
        out -= d.T @ gi
    return out


def to_faces(grid: SpatialGrid, vector: np.ndarray) -> list[np.ndarray]:
    """Move a (size, dim) vector field at points onto the faces of each axis."""
    return [f @ vector[:, i] for i, f in enumerate(_point_to_face(grid))]


def central_gradient(grid: SpatialGrid, u: np.ndarray) -> np.ndarray:
    """(size, dim) gradient at points: average of the two adjacent faces."""
    return np.stack([c @ u for c in _central_differences(grid)], axis=1)


def divergence_of_points(grid: SpatialGrid, vector: np.ndarray) -> np.ndarray:
    """div of a vector field given at points (moved to faces first)."""
    return divergence(grid, to_faces(grid, vector))


def assemble_elliptic(grid: SpatialGrid, a_sampler: ASampler) -> EllipticOperator:
    """Operator u ↦ div(a·grad u) with zero Dirichlet data.

    Diagonal coefficients a^{jj} are sampled at the face midpoints of axis j;
    mixed terms a^{ij} (i ≠ j) are sampled at points and coupled through
    central differences, which keeps the matrix symmetric when a is.
    """
    diffs = difference_matrices(grid)
    matrix = sp.csr_matrix((grid.size, grid.size))
    for j in range(grid.dim):
        a_face = np.asarray(a_sampler(grid.face_points(j)), dtype=float)
        if not np.all(np.isfinite(a_face)):
            raise GridError(f"non-finite leading coefficient on faces of axis {j}")
        matrix = matrix - diffs[j].T @ sp.diags(a_face[:, j, j]) @ diffs[j]

    symmetric = True
    if grid.dim > 1:
        a_pts = np.asarray(a_sampler(grid.points), dtype=float)
        if not np.all(np.isfinite(a_pts)):
            raise GridError("non-finite leading coefficient at grid points")
        central = _central_differences(grid)
        for i in range(grid.dim):
            for j in range(grid.dim):
                if i == j:
                    continue
                coeff = a_pts[:, i, j]
                if np.any(coeff != 0.0):
                    matrix = matrix - central[j].T @ sp.diags(coeff) @ central[i]
                if not np.array_equal(coeff, a_pts[:, j, i]):
                    symmetric = False
    return EllipticOperator(matrix.tocsr(), symmetric)


def _identity_sampler(points: np.ndarray) -> np.ndarray:
    dim = points.shape[1]
    return np.broadcast_to(np.eye(dim), (points.shape[0], dim, dim))


@lru_cache(maxsize=32)
def laplacian(grid: SpatialGrid) -> EllipticOperator:
    return assemble_elliptic(grid, _identity_sampler)


def laplacian_min_eigenvalue(grid: SpatialGrid) -> float:
    """Smallest eigenvalue of -Δ_h on the box (closed form)."""
    return float(sum(
        4.0 / h**2 * np.sin(np.pi / (2 * (n + 1))) ** 2 for h, n in zip(grid.spacing, grid.counts)
    ))
