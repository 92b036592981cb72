"""Reflected BSDEs along the characteristics x + √2·B on a joint W ⊗ B tree.

The data are the zero-state drivers of a problem with a = I and σ = 0:
f̄ = f(·, 0, 0, 0), ḡ = g(·, 0, 0, 0), the terminal value G and the obstacle
ξ, all evaluated at X_k = x + √2·B_{t_k} and the W-part of the node. Over
one edge the running reward is

    Δt·f̄(t_k, X_k) + (1/√2)(ḡ(t_k, X_k) + ḡ(t_{k+1}, X_{k+1}))·ΔB

so the forward and backward integrals against B share the endpoint sum.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.lattice.expectation import project
from src.lattice.tree import BudgetError, LatticeError, NoiseTree, node_budget
from src.problem.spec import ProblemSpec
from src.utils.logging import get_logger


logger = get_logger(__name__)


@dataclass
class CharacteristicData:
    """Data along the characteristics: per level arrays over (node, start point)."""

    tree: NoiseTree
    x: np.ndarray
    points: list[np.ndarray]
    f: list[np.ndarray]
    g: list[np.ndarray]
    xi: Optional[list[np.ndarray]]
    G: np.ndarray

    @property
    def starts(self) -> int:
        return self.x.shape[0]

    def edge_rewards(self, k: int) -> np.ndarray:
        """(n_k, b, S) running reward on every edge leaving level k."""
        tree = self.tree
        children = tree.children(k)
        dB = tree.increments[:, tree.w_dim:]
        g_sum = self.g[k][:, None, :, :] + self.g[k + 1][children]
        stochastic = np.einsum("nbsd,bd->nbs", g_sum, dB) / np.sqrt(2.0)
        return tree.dt * self.f[k][:, None, :] + stochastic


def _check_joint(spec: ProblemSpec, tree: NoiseTree) -> None:
    if tree.w_dim != spec.noise_dim or tree.b_dim != spec.spatial_dim:
        raise LatticeError(
            f"joint tree must carry {spec.noise_dim} W and {spec.spatial_dim} B coordinates, "
            f"got {tree.w_dim} and {tree.b_dim}"
        )
    if abs(tree.horizon - spec.horizon) > 1e-12 * spec.horizon:
        raise LatticeError(f"joint tree horizon {tree.horizon} differs from the problem horizon {spec.horizon}")


def start_chunks(tree: NoiseTree, starts: np.ndarray) -> list[np.ndarray]:
    """Split start points so one chunk of characteristic arrays stays within the node budget."""
    budget = node_budget()
    per_chunk = budget // tree.node_count
    if per_chunk < 1:
        raise BudgetError("characteristics of a single start point", tree.node_count, budget)
    return np.array_split(starts, -(-len(starts) // per_chunk))


def _evaluate_levels(spec: ProblemSpec, which: str, t: float, X: np.ndarray, tree: NoiseTree, k: int) -> np.ndarray:
    """One coefficient at X (n_k, S, d); a single call over all nodes when the data never read the noise."""
    n_k, S, d = X.shape
    if spec.deterministic:
        flat = spec.evaluate(which, t, X.reshape(-1, d), tree.context(k, 0), check_domain=False)
        return flat.reshape((n_k, S) + flat.shape[1:])
    return np.stack([spec.evaluate(which, t, X[i], tree.context(k, i), check_domain=False) for i in range(n_k)])


def characteristic_data(spec: ProblemSpec, tree: NoiseTree, x: np.ndarray) -> CharacteristicData:
    _check_joint(spec, tree)
    starts = np.atleast_2d(np.asarray(x, dtype=float))
    if starts.shape[1] != spec.spatial_dim:
        raise ValueError(f"start points have dimension {starts.shape[1]}, problem has {spec.spatial_dim}")
    points, f, g, xi = [], [], [], []
    for k in range(tree.steps + 1):
        b = tree.values(k)[:, tree.w_dim:]
        X = starts[None, :, :] + np.sqrt(2.0) * b[:, None, :]
        t = tree.time(k)
        points.append(X)
        f.append(_evaluate_levels(spec, "f", t, X, tree, k))
        g.append(_evaluate_levels(spec, "g", t, X, tree, k))
        xi.append(_evaluate_levels(spec, "xi", t, X, tree, k) if spec.has_obstacle else None)
    G = _evaluate_levels(spec, "G", spec.horizon, points[-1], tree, tree.steps)
    return CharacteristicData(tree=tree, x=starts, points=points, f=f, g=g, xi=xi if spec.has_obstacle else None, G=G)


@dataclass
class RbsdeSolution:
    """Y, dK on levels 0..N; Z (n_k, m, S) and Z̃ (n_k, d, S) on levels 0..N-1.

    K is the cumulative reflection, stored only on non-recombining trees
    where every node has a single history.
    """

    data: CharacteristicData
    Y: list[np.ndarray]
    Z: list[np.ndarray]
    Ztilde: list[np.ndarray]
    dK: list[np.ndarray]
    K: Optional[list[np.ndarray]] = None
    penalty: Optional[float] = None

    @property
    def tree(self) -> NoiseTree:
        return self.data.tree

    def root(self) -> np.ndarray:
        return self.Y[0][0]

    def obstacle_gap(self) -> float:
        """min(Y - ξ∘X) over levels 0..N-1, +inf without an obstacle."""
        if self.data.xi is None:
            return float("inf")
        return float(min(np.min(self.Y[k] - self.data.xi[k]) for k in range(self.tree.steps)))

    def skorohod_residual(self) -> float:
        if self.data.xi is None:
            return 0.0
        return float(max(
            (np.max(np.abs(self.Y[k] - self.data.xi[k]) * self.dK[k]) for k in range(self.tree.steps)), default=0.0
        ))


def _cumulative(tree: NoiseTree, dK: list[np.ndarray]) -> Optional[list[np.ndarray]]:
    if tree.recombining:
        return None
    K = [np.zeros_like(dK[0])]
    for k in range(tree.steps):
        parents = tree.parent(k + 1, np.arange(tree.level_size(k + 1)))
        K.append(K[k][parents] + dK[k][parents])
    return K


def _backward(data: CharacteristicData, penalty: Optional[float]) -> RbsdeSolution:
    tree = data.tree
    N, dt, m = tree.steps, tree.dt, tree.w_dim
    Y: list = [None] * (N + 1)
    Z: list = [None] * N
    Ztilde: list = [None] * N
    dK: list = [None] * (N + 1)
    Y[N] = data.G
    dK[N] = np.zeros_like(data.G)
    for k in range(N - 1, -1, -1):
        target = Y[k + 1][tree.children(k)] + data.edge_rewards(k)
        proj = project(tree, target)
        cont = proj.mean
        Z[k] = proj.v[:, :m]
        Ztilde[k] = proj.v[:, m:]
        if data.xi is None:
            Y[k] = cont
        elif penalty is None:
            Y[k] = np.maximum(data.xi[k], cont)
        else:
            below = cont < data.xi[k]
            Y[k] = np.where(below, (cont + dt * penalty * data.xi[k]) / (1.0 + dt * penalty), cont)
        dK[k] = np.maximum(Y[k] - cont, 0.0)
    return RbsdeSolution(data=data, Y=Y, Z=Z, Ztilde=Ztilde, dK=dK, K=_cumulative(tree, dK), penalty=penalty)


def solve_reflected_bsde(
    spec: ProblemSpec,
    x: np.ndarray,
    tree: NoiseTree,
    refl_tol: float = 1e-12,
) -> RbsdeSolution:
    """Reflected dynamic programming from every start point in x (S, d) at once."""
    data = characteristic_data(spec, tree, x)
    sol = _backward(data, None)
    gap = sol.obstacle_gap()
    if gap < -refl_tol:
        logger.warning("Reflected value below the obstacle", {"gap": gap, "tolerance": refl_tol})
    logger.info("Reflected BSDE solved", {"levels": tree.steps, "starts": data.starts, "root_min": float(np.min(sol.root()))})
    return sol


def solve_penalized_bsde(spec: ProblemSpec, x: np.ndarray, tree: NoiseTree, n: float) -> RbsdeSolution:
    """Implicit penalty Y = cont + Δt·n(ξ - Y)⁺ in closed form; dK is the penalty increment."""
    if n < 1:
        raise ValueError(f"penalty level must be at least 1, got {n}")
    return _backward(characteristic_data(spec, tree, x), float(n))
