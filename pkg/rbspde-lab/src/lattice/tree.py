"""Branching models of the driving Wiener processes.

Every edge carries an increment vector in {±√Δt}^D with probability 1/b,
b = 2^D. Child j of a node moves coordinate r up when bit r of j is set.
On a non-recombining tree child j of node i at level k is node i·b + j at
level k + 1. A recombining tree is the product of D binomial lattices: a
node is the tuple of up-move counts per coordinate, raveled in C order.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from dotenv import load_dotenv
from scipy.stats import binom

from src.utils.logging import get_logger
from src.utils.timeutils import time_levels


logger = get_logger(__name__)

BUDGET_ENV = "RBSPDE_LAB_BUDGET"
DEFAULT_BUDGET = 2**20
DEFAULT_JOINT_DEPTH = 6


class BudgetError(RuntimeError):
    def __init__(self, message: str, requested: int, allowed: int):
        super().__init__(f"{message}: {requested} nodes requested, budget is {allowed}")
        self.requested = requested
        self.allowed = allowed


class LatticeError(ValueError):
    pass


def node_budget() -> int:
    load_dotenv()
    raw = os.getenv(BUDGET_ENV)
    if raw is None or raw.strip() == "":
        return DEFAULT_BUDGET
    try:
        return int(float(raw))
    except ValueError as exc:
        raise BudgetError(f"{BUDGET_ENV}={raw!r} is not a number", 0, 0) from exc


@dataclass(frozen=True)
class NodeContext:
    level: int
    index: int
    time: float
    w: np.ndarray
    b: np.ndarray
    history: Optional[np.ndarray] = None

    def w_at(self, r: int, level: int) -> float:
        """Value of W^r (1-based) at the ancestor on ``level``."""
        if not 1 <= r <= self.w.size:
            raise LatticeError(f"W{r} does not exist, the tree drives {self.w.size} coordinates")
        if level == self.level:
            return float(self.w[r - 1])
        if level > self.level or level < 0:
            raise LatticeError(f"level {level} is not an ancestor level of a node on level {self.level}")
        if self.history is None:
            raise LatticeError("ancestor lookups need a non-recombining tree")
        return float(self.history[level, r - 1])


@dataclass
class NoiseTree:
    noise_dim: int
    w_dim: int
    steps: int
    horizon: float
    recombining: bool
    _children: list[np.ndarray] = field(default_factory=list, repr=False)
    _values: list[np.ndarray] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        self.dt = self.horizon / self.steps if self.steps > 0 else 0.0
        signs = (np.arange(self.branching)[:, None] >> np.arange(self.noise_dim)) & 1
        self.increments = np.sqrt(self.dt) * (2.0 * signs - 1.0)
        self.times = time_levels(self.horizon, self.steps)
        if not self._values:
            self._build()

    @property
    def branching(self) -> int:
        return 2**self.noise_dim

    @property
    def b_dim(self) -> int:
        return self.noise_dim - self.w_dim

    def level_size(self, k: int) -> int:
        if self.recombining:
            return (k + 1) ** self.noise_dim
        return self.branching**k

    @property
    def level_sizes(self) -> list[int]:
        return [self.level_size(k) for k in range(self.steps + 1)]

    @property
    def node_count(self) -> int:
        return sum(self.level_sizes)

    def time(self, k: int) -> float:
        return float(self.times[k])

    def _build(self) -> None:
        sqdt = np.sqrt(self.dt)
        self._values = [np.zeros((1, self.noise_dim))]
        for k in range(self.steps):
            if self.recombining:
                counts = self._up_counts(k)
                child_counts = counts[:, None, :] + ((np.arange(self.branching)[:, None] >> np.arange(self.noise_dim)) & 1)
                dims = (k + 2,) * self.noise_dim
                flat = child_counts.reshape(-1, self.noise_dim)
                self._children.append(np.ravel_multi_index(tuple(flat.T), dims).reshape(-1, self.branching))
                next_counts = self._up_counts(k + 1)
                self._values.append(sqdt * (2.0 * next_counts - (k + 1)))
            else:
                n_k = self.level_size(k)
                self._children.append(np.arange(n_k * self.branching).reshape(n_k, self.branching))
                parent_values = np.repeat(self._values[k], self.branching, axis=0)
                self._values.append(parent_values + np.tile(self.increments, (n_k, 1)))

    def _up_counts(self, k: int) -> np.ndarray:
        dims = (k + 1,) * self.noise_dim
        return np.stack(np.unravel_index(np.arange(self.level_size(k)), dims), axis=1)

    def children(self, k: int) -> np.ndarray:
        """(n_k, b) child indices on level k + 1."""
        self._check_parent_level(k)
        return self._children[k]

    def values(self, k: int) -> np.ndarray:
        """(n_k, D) process values at the nodes of level k, W coordinates first."""
        if not 0 <= k <= self.steps:
            raise LatticeError(f"level {k} outside 0..{self.steps}")
        return self._values[k]

    def probabilities(self, k: int) -> np.ndarray:
        if not 0 <= k <= self.steps:
            raise LatticeError(f"level {k} outside 0..{self.steps}")
        if not self.recombining:
            return np.full(self.level_size(k), float(self.branching) ** -k)
        weights = binom.pmf(self._up_counts(k), k, 0.5)
        return np.prod(weights, axis=1)

    def parent(self, k: int, index: np.ndarray | int) -> np.ndarray | int:
        if self.recombining:
            raise LatticeError("recombining lattices have no unique parent")
        if not 1 <= k <= self.steps:
            raise LatticeError(f"level {k} has no parents")
        return index // self.branching

    def ancestors(self, k: int, index: int) -> np.ndarray:
        """Node indices on levels 0..k along the path to (k, index)."""
        if self.recombining:
            raise LatticeError("recombining lattices have no unique ancestry")
        path = np.empty(k + 1, dtype=int)
        path[k] = index
        for level in range(k, 0, -1):
            path[level - 1] = path[level] // self.branching
        return path

    def context(self, k: int, index: int) -> NodeContext:
        value = self.values(k)[index]
        history = None
        if not self.recombining:
            path = self.ancestors(k, index)
            history = np.stack([self._values[level][path[level], : self.w_dim] for level in range(k + 1)])
        return NodeContext(
            level=k,
            index=int(index),
            time=self.time(k),
            w=value[: self.w_dim].copy(),
            b=value[self.w_dim:].copy(),
            history=history,
        )

    def locate(self, signs: np.ndarray) -> np.ndarray:
        """Node indices (count, steps + 1) visited by paths with per-step signs (count, steps, D)."""
        signs = np.asarray(signs)
        if signs.ndim != 3 or signs.shape[1:] != (self.steps, self.noise_dim):
            raise LatticeError(f"signs must have shape (count, {self.steps}, {self.noise_dim}), got {signs.shape}")
        up = (signs > 0).astype(int)
        count = signs.shape[0]
        nodes = np.zeros((count, self.steps + 1), dtype=np.int64)
        if self.recombining:
            totals = np.zeros((count, self.noise_dim), dtype=int)
            for k in range(self.steps):
                totals += up[:, k, :]
                nodes[:, k + 1] = np.ravel_multi_index(tuple(totals.T), (k + 2,) * self.noise_dim)
        else:
            bits = (up << np.arange(self.noise_dim)).sum(axis=2)
            for k in range(self.steps):
                nodes[:, k + 1] = nodes[:, k] * self.branching + bits[:, k]
        return nodes

    def _check_parent_level(self, k: int) -> None:
        if not 0 <= k < self.steps:
            raise LatticeError(f"level {k} has no children (tree has {self.steps} steps)")


def _guard(tree_nodes: int, budget: int, what: str) -> None:
    if tree_nodes > budget:
        logger.error("Node budget exceeded", {"what": what, "requested": tree_nodes, "budget": budget})
        raise BudgetError(what, tree_nodes, budget)


def build_tree(
    noise_dim: int,
    steps: int,
    horizon: float,
    recombine: bool = False,
    budget: Optional[int] = None,
) -> NoiseTree:
    if noise_dim < 1:
        raise LatticeError(f"noise dimension must be positive, got {noise_dim}")
    if steps < 1:
        raise LatticeError(f"need at least one time step, got {steps}")
    if horizon <= 0:
        raise LatticeError(f"horizon must be positive, got {horizon}")
    if recombine and noise_dim != 1:
        raise LatticeError("recombination is only available for a one-dimensional W")
    cap = node_budget() if budget is None else budget
    last = (steps + 1) if recombine else 2 ** (noise_dim * steps)
    _guard(last, cap, "W-tree final level")
    return NoiseTree(noise_dim=noise_dim, w_dim=noise_dim, steps=steps, horizon=horizon, recombining=recombine)


def build_joint_tree(
    w_dim: int,
    b_dim: int,
    steps: int,
    horizon: float,
    recombine: bool = False,
    max_depth: int = DEFAULT_JOINT_DEPTH,
    budget: Optional[int] = None,
) -> NoiseTree:
    """Product tree of W (w_dim coordinates) and the auxiliary B (b_dim coordinates).

    A recombining product lattice is available for w_dim = b_dim = 1 and is
    bounded by the node budget only; branching trees are capped at max_depth.
    """
    if w_dim < 1 or b_dim < 1:
        raise LatticeError(f"joint trees need both drivers, got w_dim={w_dim}, b_dim={b_dim}")
    if steps < 0:
        raise LatticeError(f"negative step count {steps}")
    if horizon <= 0:
        raise LatticeError(f"horizon must be positive, got {horizon}")
    noise_dim = w_dim + b_dim
    cap = node_budget() if budget is None else budget
    if recombine:
        if w_dim != 1 or b_dim != 1:
            raise LatticeError("joint recombination is only available for one W and one B coordinate")
        _guard((steps + 1) ** 2, cap, "joint lattice final level")
    else:
        if steps > max_depth:
            raise BudgetError(f"joint tree depth {steps} above the guard {max_depth}", 2 ** (noise_dim * steps), cap)
        _guard(2 ** (noise_dim * steps), cap, "joint tree final level")
    return NoiseTree(noise_dim=noise_dim, w_dim=w_dim, steps=steps, horizon=horizon, recombining=recombine)
