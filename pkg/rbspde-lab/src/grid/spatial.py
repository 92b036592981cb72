from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class SpatialGrid:
    """Interior points of a box with zero Dirichlet values outside.

    Along axis i there are ``counts[i]`` interior points at lo + (p + 1)·h_i,
    with h_i = (hi - lo) / (counts[i] + 1). Fields are flat float arrays in
    C order over ``shape``.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if not (len(self.lower) == len(self.upper) == len(self.counts)):
            raise GridError("lower, upper and counts must have one entry per dimension")
        for lo, hi, n in zip(self.lower, self.upper, self.counts):
            if n < 2:
                raise GridError(f"need at least 2 interior points per dimension, got {n}")
            if not hi > lo:
                raise GridError(f"empty axis [{lo}, {hi}]")

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.counts)

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @cached_property
    def spacing(self) -> np.ndarray:
        return np.array([(hi - lo) / (n + 1) for lo, hi, n in zip(self.lower, self.upper, self.counts)])

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axis(self, i: int) -> np.ndarray:
        h = self.spacing[i]
        return self.lower[i] + h * np.arange(1, self.counts[i] + 1)

    def padded_axis(self, i: int) -> np.ndarray:
        """Axis coordinates including the two boundary nodes."""
        return np.linspace(self.lower[i], self.upper[i], self.counts[i] + 2)

    def face_axis(self, i: int) -> np.ndarray:
        """Midpoints of the counts[i] + 1 cell faces along axis i."""
        h = self.spacing[i]
        return self.lower[i] + h * (np.arange(self.counts[i] + 1) + 0.5)

    def face_shape(self, i: int) -> tuple[int, ...]:
        shape = list(self.counts)
        shape[i] += 1
        return tuple(shape)

    @cached_property
    def points(self) -> np.ndarray:
        """(size, dim) coordinates of the interior points."""
        mesh = np.meshgrid(*[self.axis(i) for i in range(self.dim)], indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def face_points(self, i: int) -> np.ndarray:
        axes = [self.axis(j) for j in range(self.dim)]
        axes[i] = self.face_axis(i)
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        return np.all((pts >= lo) & (pts <= hi), axis=1)

    def refine(self) -> "SpatialGrid":
        """Halve the spacing: n interior points become 2n + 1."""
        return SpatialGrid(self.lower, self.upper, tuple(2 * n + 1 for n in self.counts))

    def zeros(self) -> np.ndarray:
        return np.zeros(self.size)


def build_grid(bounds: Sequence[Sequence[float]], counts: Sequence[int]) -> SpatialGrid:
    if len(bounds) != len(counts):
        raise GridError(f"{len(bounds)} domain axes but {len(counts)} grid counts")
    return SpatialGrid(
        lower=tuple(float(b[0]) for b in bounds),
        upper=tuple(float(b[1]) for b in bounds),
        counts=tuple(int(n) for n in counts),
    )
