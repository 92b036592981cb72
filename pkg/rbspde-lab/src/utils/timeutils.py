from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np


def time_levels(horizon: float, steps: int) -> np.ndarray:
    """Uniform time grid t_k = k·T/N for k = 0..N."""
    return np.linspace(0.0, horizon, steps + 1)


@dataclass
class Stopwatch:
    started: float = field(default_factory=time.perf_counter)

    def elapsed(self) -> float:
        return time.perf_counter() - self.started
