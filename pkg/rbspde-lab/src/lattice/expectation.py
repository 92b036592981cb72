from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src.lattice.tree import LatticeError, NoiseTree


@dataclass
class Projection:
    """Martingale representation of a level-(k+1) quantity seen from level k.

    ``v`` has shape (n_k, D, ...) with one component per tree coordinate;
    ``residual`` is √Δt times the RMS over children of the part orthogonal
    to the constants and the increments.
    """

    mean: np.ndarray
    v: np.ndarray
    residual: np.ndarray


def _gather(tree: NoiseTree, k: int, child_values: np.ndarray) -> np.ndarray:
    if not 0 <= k < tree.steps:
        raise LatticeError(f"level {k} has no children (tree has {tree.steps} steps)")
    values = np.asarray(child_values, dtype=float)
    expected = tree.level_size(k + 1)
    if values.shape[0] != expected:
        raise LatticeError(f"level {k + 1} has {expected} nodes, got values for {values.shape[0]}")
    return values[tree.children(k)]


def cond_expect(tree: NoiseTree, k: int, child_values: np.ndarray) -> np.ndarray:
    """E[· | level-k node]: average over the b equally likely children."""
    return _gather(tree, k, child_values).mean(axis=1)


def martingale_projection(
    tree: NoiseTree, k: int, child_values: np.ndarray, weight: float = 1.0
) -> Projection:
    """v^r = E[value·ΔW^r | node] / Δt for every tree coordinate r.

    ``weight`` scales the squared residual (the cell volume for fields).
    """
    return project(tree, _gather(tree, k, child_values), weight)


def project(tree: NoiseTree, grouped: np.ndarray, weight: float = 1.0) -> Projection:
    """Projection of per-edge values (n_k, b, ...) onto the constants and the edge increments."""
    mean = grouped.mean(axis=1)
    inc = tree.increments
    trailing = grouped.shape[2:]
    flat = grouped.reshape(grouped.shape[0], grouped.shape[1], -1)
    v = np.einsum("nbp,br->nrp", flat, inc) / (tree.branching * tree.dt)
    fitted = mean.reshape(mean.shape[0], 1, -1) + np.einsum("nrp,br->nbp", v, inc)
    remainder = flat - fitted
    residual = np.sqrt(weight * tree.dt * np.mean(np.sum(remainder**2, axis=2), axis=1))
    return Projection(
        mean=mean,
        v=v.reshape((v.shape[0], tree.noise_dim) + trailing),
        residual=residual,
    )


def expect_from(tree: NoiseTree, k: int, level_values: np.ndarray, level: int) -> np.ndarray:
    """Conditional expectation on level k of values given on a later level."""
    if level < k:
        raise LatticeError(f"cannot condition level {level} values on the later level {k}")
    values = np.asarray(level_values, dtype=float)
    for j in range(level - 1, k - 1, -1):
        values = cond_expect(tree, j, values)
    return values


def expectation(tree: NoiseTree, k: int, node_values: np.ndarray) -> float | np.ndarray:
    """Unconditional expectation of per-node values on level k."""
    values = np.asarray(node_values, dtype=float)
    if values.shape[0] != tree.level_size(k):
        raise LatticeError(f"level {k} has {tree.level_size(k)} nodes, got {values.shape[0]}")
    return np.tensordot(tree.probabilities(k), values, axes=(0, 0))
