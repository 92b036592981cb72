from __future__ import annotations

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from src.grid.operators import gradient
from src.grid.spatial import SpatialGrid


def interpolate_field(grid: SpatialGrid, u: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation with the zero boundary values; NaN outside the box."""
    padded = np.pad(u.reshape(grid.shape), 1)
    axes = [grid.padded_axis(i) for i in range(grid.dim)]
    interp = RegularGridInterpolator(axes, padded, method="linear", bounds_error=False, fill_value=np.nan)
    return interp(np.atleast_2d(points))


def interpolate_gradient(grid: SpatialGrid, u: np.ndarray, points: np.ndarray) -> np.ndarray:
    """(len(points), dim) gradient, each component interpolated on its own face grid."""
    pts = np.atleast_2d(points)
    out = np.empty((pts.shape[0], grid.dim))
    for i, face_values in enumerate(gradient(grid, u)):
        values = face_values.reshape(grid.face_shape(i))
        axes = []
        pad = []
        for j in range(grid.dim):
            if j == i:
                axes.append(grid.face_axis(i))
                pad.append((0, 0))
            else:
                axes.append(grid.padded_axis(j))
                pad.append((1, 1))
        interp = RegularGridInterpolator(
            axes, np.pad(values, pad), method="linear", bounds_error=False, fill_value=None
        )
        component = interp(pts)
        component[~grid.contains(pts)] = np.nan
        out[:, i] = component
    return out
