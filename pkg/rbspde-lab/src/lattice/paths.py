from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from src.data.storage import save_frame
from src.lattice.tree import BudgetError, LatticeError, node_budget


@dataclass
class PathSet:
    """Sampled ±√Δt increments of W (count, steps, m) and B (count, steps, d)."""

    dW: np.ndarray
    dB: np.ndarray
    dt: float

    @property
    def count(self) -> int:
        return self.dW.shape[0]

    @property
    def steps(self) -> int:
        return self.dW.shape[1]

    @property
    def W(self) -> np.ndarray:
        return _cumulative(self.dW)

    @property
    def B(self) -> np.ndarray:
        return _cumulative(self.dB)

    def signs(self) -> np.ndarray:
        """(count, steps, m + d) signs, W coordinates first, as expected by NoiseTree.locate."""
        return np.sign(np.concatenate([self.dW, self.dB], axis=2)).astype(int)

    def w_signs(self) -> np.ndarray:
        return np.sign(self.dW).astype(int)

    def to_frame(self) -> pd.DataFrame:
        count, steps = self.count, self.steps
        columns = {
            "path": np.repeat(np.arange(count), steps),
            "step": np.tile(np.arange(steps), count),
        }
        for r in range(self.dW.shape[2]):
            columns[f"dW{r + 1}"] = self.dW[:, :, r].reshape(-1)
        for i in range(self.dB.shape[2]):
            columns[f"dB{i + 1}"] = self.dB[:, :, i].reshape(-1)
        return pd.DataFrame(columns)

    def save_csv(self, path: str | Path) -> Path:
        return save_frame(self.to_frame(), path)


def _cumulative(increments: np.ndarray) -> np.ndarray:
    start = np.zeros((increments.shape[0], 1, increments.shape[2]))
    return np.concatenate([start, np.cumsum(increments, axis=1)], axis=1)


def sample_joint_paths(
    w_dim: int,
    b_dim: int,
    steps: int,
    horizon: float,
    count: int,
    seed: int,
    budget: Optional[int] = None,
) -> PathSet:
    """Bernoulli increment paths with W and B drawn from independent child streams of ``seed``."""
    if count < 1:
        raise LatticeError(f"need at least one path, got {count}")
    if steps < 1 or horizon <= 0:
        raise LatticeError(f"invalid time grid: steps={steps}, horizon={horizon}")
    cap = node_budget() if budget is None else budget
    if count * steps > cap:
        raise BudgetError("path sample", count * steps, cap)
    w_seq, b_seq = np.random.SeedSequence(seed).spawn(2)
    sqdt = np.sqrt(horizon / steps)
    dW = sqdt * np.random.default_rng(w_seq).choice([-1.0, 1.0], size=(count, steps, w_dim))
    dB = sqdt * np.random.default_rng(b_seq).choice([-1.0, 1.0], size=(count, steps, b_dim))
    return PathSet(dW=dW, dB=dB, dt=horizon / steps)
