from __future__ import annotations

from typing import Sequence

import numpy as np


def neg_part(values: np.ndarray) -> np.ndarray:
    """x⁻ = max(-x, 0)."""
    return np.maximum(-values, 0.0)


def pos_part(values: np.ndarray) -> np.ndarray:
    return np.maximum(values, 0.0)


def rel_l2(approx: np.ndarray, reference: np.ndarray) -> float:
    ref_norm = float(np.linalg.norm(reference))
    diff = float(np.linalg.norm(approx - reference))
    if ref_norm == 0.0:
        return diff
    return diff / ref_norm


def observed_orders(errors: Sequence[float], steps: Sequence[float]) -> list[float]:
    """Successive log-ratio convergence orders; NaN where an error vanishes."""
    orders: list[float] = []
    for (e0, e1), (h0, h1) in zip(zip(errors, errors[1:]), zip(steps, steps[1:])):
        if e0 <= 0.0 or e1 <= 0.0 or h0 == h1:
            orders.append(float("nan"))
            continue
        orders.append(float(np.log(e0 / e1) / np.log(h0 / h1)))
    return orders
