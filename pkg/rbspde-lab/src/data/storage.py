from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from src.grid.spatial import SpatialGrid


BINARY_MAGIC = b"RBSF"
CSV_FLOAT_FORMAT = "%.17g"


def _prepare(path: str | Path) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


def save_frame(df: pd.DataFrame, path: str | Path) -> Path:
    out = _prepare(path)
    df.to_csv(out, index=False, float_format=CSV_FLOAT_FORMAT)
    return out


def field_frame(grid: SpatialGrid, u: np.ndarray) -> pd.DataFrame:
    columns = {f"x{i + 1}": grid.points[:, i] for i in range(grid.dim)}
    columns["value"] = u
    return pd.DataFrame(columns)


def save_field_csv(grid: SpatialGrid, u: np.ndarray, path: str | Path) -> Path:
    return save_frame(field_frame(grid, u), path)


def save_field_binary(grid: SpatialGrid, u: np.ndarray, path: str | Path) -> Path:
    """Header: magic, dim, counts, lower, upper; payload: row-major float64."""
    out = _prepare(path)
    header = BINARY_MAGIC + struct.pack("<i", grid.dim)
    header += struct.pack(f"<{grid.dim}i", *grid.counts)
    header += struct.pack(f"<{2 * grid.dim}d", *grid.lower, *grid.upper)
    with out.open("wb") as file:
        file.write(header)
        file.write(np.ascontiguousarray(u, dtype="<f8").tobytes())
    return out


def node_fields_frame(grid: SpatialGrid, levels: Sequence[np.ndarray], label: str = "value") -> pd.DataFrame:
    """Long table (level, node, x1.., value) for per-level node fields of shape (n_k, size)."""
    frames = []
    for level, fields in enumerate(levels):
        n_nodes = fields.shape[0]
        block = {
            "level": np.full(n_nodes * grid.size, level),
            "node": np.repeat(np.arange(n_nodes), grid.size),
        }
        for i in range(grid.dim):
            block[f"x{i + 1}"] = np.tile(grid.points[:, i], n_nodes)
        block[label] = fields.reshape(-1)
        frames.append(pd.DataFrame(block))
    return pd.concat(frames, ignore_index=True)


def save_node_fields_csv(
    grid: SpatialGrid, levels: Sequence[np.ndarray], path: str | Path, label: str = "value"
) -> Path:
    return save_frame(node_fields_frame(grid, levels, label), path)
