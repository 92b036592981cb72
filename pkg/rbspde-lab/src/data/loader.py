"""Readers for the lab's CSV and binary artifacts."""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd

from src.data.storage import BINARY_MAGIC
from src.grid.spatial import SpatialGrid


class ArtifactError(ValueError):
    pass


def load_field_binary(path: str | Path) -> tuple[SpatialGrid, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != BINARY_MAGIC:
        raise ArtifactError(f"{path}: not a field snapshot (bad magic)")
    offset = 4
    (dim,) = struct.unpack_from("<i", raw, offset)
    offset += 4
    counts = struct.unpack_from(f"<{dim}i", raw, offset)
    offset += 4 * dim
    bounds = struct.unpack_from(f"<{2 * dim}d", raw, offset)
    offset += 16 * dim
    grid = SpatialGrid(tuple(bounds[:dim]), tuple(bounds[dim:]), tuple(counts))
    values = np.frombuffer(raw, dtype="<f8", offset=offset)
    if values.size != grid.size:
        raise ArtifactError(f"{path}: payload has {values.size} values, header implies {grid.size}")
    return grid, values.astype(float)


def load_csv(path: str | Path, required: Iterable[str] = ()) -> pd.DataFrame:
    csv_path = Path(path)
    if not csv_path.exists():
        raise ArtifactError(f"{csv_path}: no such artifact")
    try:
        df = pd.read_csv(csv_path)
    except pd.errors.EmptyDataError as exc:
        raise ArtifactError(f"{csv_path}: empty CSV") from exc
    if df.empty:
        raise ArtifactError(f"{csv_path}: empty CSV")
    missing = [col for col in required if col not in df.columns]
    if missing:
        raise ArtifactError(f"{csv_path}: schema mismatch, missing columns {missing}")
    return df
