from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src.lattice.tree import BudgetError, NoiseTree
from src.pathwise.rbsde import CharacteristicData, characteristic_data
from src.problem.spec import ProblemSpec
from src.utils.logging import get_logger


logger = get_logger(__name__)

EXHAUSTIVE_NODES = 10_000
ENUMERATION_BUDGET = 2_000_000


@dataclass
class StoppingPolicy:
    """Stop flags (n_k, S) per level; the last level always stops."""

    stop: list[np.ndarray]

    def __post_init__(self) -> None:
        if not np.all(self.stop[-1]):
            raise ValueError("a stopping policy must stop at the terminal level")


def _obstacle(data: CharacteristicData, k: int) -> np.ndarray:
    if data.xi is None:
        return np.full_like(data.f[k], -np.inf)
    return data.xi[k]


def snell_value(spec: ProblemSpec, x: np.ndarray, tree: NoiseTree) -> list[np.ndarray]:
    """Snell envelope of the accumulated reward, net of the reward already earned.

    On branching trees the reward process R_k = A_k + ξ_k is accumulated
    forward along every path and its envelope S_k = max(R_k, E[S_{k+1}])
    computed directly; the value is S_k - A_k. Recombining lattices carry no
    per-node history, so there the envelope is taken in net form.
    """
    data = characteristic_data(spec, tree, x)
    N = tree.steps
    if tree.recombining:
        value = data.G
        out = [value]
        for k in range(N - 1, -1, -1):
            value = np.maximum(_obstacle(data, k), (value[tree.children(k)] + data.edge_rewards(k)).mean(axis=1))
            out.append(value)
        return out[::-1]

    earned = [np.zeros_like(data.f[0])]
    for k in range(N):
        rewards = data.edge_rewards(k)
        earned.append((earned[k][:, None, :] + rewards).reshape(-1, data.starts))
    envelope = earned[N] + data.G
    out = [envelope - earned[N]]
    for k in range(N - 1, -1, -1):
        envelope = np.maximum(earned[k] + _obstacle(data, k), envelope[tree.children(k)].mean(axis=1))
        out.append(envelope - earned[k])
    return out[::-1]


def optimal_policy(spec: ProblemSpec, x: np.ndarray, tree: NoiseTree) -> StoppingPolicy:
    """Stop as soon as the obstacle reaches the continuation value."""
    data = characteristic_data(spec, tree, x)
    value = data.G
    stop = [np.ones_like(data.G, dtype=bool)]
    for k in range(tree.steps - 1, -1, -1):
        cont = (value[tree.children(k)] + data.edge_rewards(k)).mean(axis=1)
        flags = _obstacle(data, k) >= cont
        stop.append(flags)
        value = np.where(flags, _obstacle(data, k), cont)
    return StoppingPolicy(stop=stop[::-1])


def policy_value(spec: ProblemSpec, x: np.ndarray, tree: NoiseTree, policy: StoppingPolicy) -> np.ndarray:
    """Expected reward at the root when following the policy, one value per start point."""
    data = characteristic_data(spec, tree, x)
    value = data.G
    for k in range(tree.steps - 1, -1, -1):
        cont = (value[tree.children(k)] + data.edge_rewards(k)).mean(axis=1)
        value = np.where(policy.stop[k], _obstacle(data, k), cont)
    return value[0]


def _attainable(data: CharacteristicData, s: int, budget: int) -> np.ndarray:
    tree = data.tree
    N = tree.steps
    sets = [np.unique(data.G[:, s][i : i + 1]) for i in range(tree.level_size(N))]
    enumerated = len(sets)
    for k in range(N - 1, -1, -1):
        rewards = data.edge_rewards(k)[:, :, s]
        obstacle = _obstacle(data, k)[:, s]
        level = []
        for i, children in enumerate(tree.children(k)):
            combined = np.zeros(1)
            for j, c in enumerate(children):
                combined = np.add.outer(combined, rewards[i, j] + sets[c]).ravel()
                enumerated += combined.size
                if enumerated > budget:
                    raise BudgetError("stopping-time enumeration", enumerated, budget)
            values = combined / tree.branching
            if np.isfinite(obstacle[i]):
                values = np.append(values, obstacle[i])
            level.append(np.unique(values))
        sets = level
    return sets[0]


def brute_force_stopping(
    spec: ProblemSpec,
    x: np.ndarray,
    tree: NoiseTree,
    max_nodes: int = EXHAUSTIVE_NODES,
    budget: int = ENUMERATION_BUDGET,
) -> np.ndarray:
    """Best expected reward over every stopping time, enumerated exhaustively; one value per start point."""
    if tree.node_count > max_nodes:
        raise BudgetError("exhaustive stopping search", tree.node_count, max_nodes)
    data = characteristic_data(spec, tree, x)
    best = np.array([float(np.max(_attainable(data, s, budget))) for s in range(data.starts)])
    logger.info("Exhaustive stopping search", {"nodes": tree.node_count, "starts": data.starts, "best": best})
    return best
