from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from src.lattice.tree import NodeContext, NoiseTree


class ProblemError(ValueError):
    def __init__(self, message: str, witness: Optional[dict] = None):
        super().__init__(message if witness is None else f"{message} at {witness}")
        self.witness = witness or {}


# (t, x(P, d), node) -> (P, ...)
FieldMap = Callable[[float, np.ndarray, NodeContext], np.ndarray]
# (t, x, node, theta(P,), y(P, d), z(P, m)) -> (P, ...)
StateMap = Callable[[float, np.ndarray, NodeContext, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
TerminalMap = Callable[[np.ndarray, NodeContext], np.ndarray]

COEFFICIENTS = ("a", "sigma", "f", "g", "G", "xi", "xi_dom", "f_plus")


@dataclass(frozen=True)
class StructuralConstants:
    lam: float
    Lam: float
    kappa: float
    beta: float
    rho: float
    L: float

    def __post_init__(self) -> None:
        if self.rho <= 1.0:
            raise ProblemError(f"rho must exceed 1, got {self.rho}")
        for name in ("lam", "Lam", "L"):
            if getattr(self, name) <= 0:
                raise ProblemError(f"constant {name} must be positive, got {getattr(self, name)}")
        if self.kappa < 0 or self.beta < 0:
            raise ProblemError("kappa and beta must be nonnegative")

    @property
    def rho_prime(self) -> float:
        return self.rho / (self.rho - 1.0)

    def margin(self, rho: Optional[float] = None) -> float:
        """λ - κ - ϱ'β, positive when super-parabolicity leaves room for the drift."""
        r = self.rho if rho is None else rho
        return self.lam - self.kappa - r / (r - 1.0) * self.beta


@dataclass(frozen=True)
class ProblemSpec:
    """One reflected backward SPDE instance on a box.

    All coefficient maps are vectorised over points. ``deterministic`` marks
    data that never reads the noise, ``state_free`` marks f and g that do not
    read (u, ∇u, v), ``static_operator`` marks a and sigma constant in t and
    the node.
    """

    spatial_dim: int
    noise_dim: int
    horizon: float
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    a: FieldMap
    sigma: FieldMap
    f: StateMap
    g: StateMap
    G: TerminalMap
    constants: StructuralConstants
    xi: Optional[FieldMap] = None
    xi_dom: Optional[FieldMap] = None
    f_plus: Optional[FieldMap] = None
    name: str = "problem"
    deterministic: bool = False
    state_free: bool = False
    static_operator: bool = False
    sources: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.spatial_dim < 1 or self.noise_dim < 1:
            raise ProblemError("spatial and noise dimensions must be positive")
        if self.horizon <= 0:
            raise ProblemError(f"horizon must be positive, got {self.horizon}")
        if len(self.lower) != self.spatial_dim or len(self.upper) != self.spatial_dim:
            raise ProblemError("domain box must have one [lo, hi] pair per spatial dimension")
        if any(hi <= lo for lo, hi in zip(self.lower, self.upper)):
            raise ProblemError(f"empty domain box {list(zip(self.lower, self.upper))}")

    @property
    def has_obstacle(self) -> bool:
        return self.xi is not None

    def inside(self, x: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(x)
        return np.all((pts >= np.asarray(self.lower)) & (pts <= np.asarray(self.upper)), axis=1)

    def evaluate(
        self,
        which: str,
        t: float,
        x: np.ndarray,
        node: NodeContext,
        state: Optional[Sequence[np.ndarray]] = None,
        check_domain: bool = True,
    ) -> np.ndarray:
        """Evaluate one coefficient at points x (P, d); f and g read state = (θ, y, z), zero by default."""
        if which not in COEFFICIENTS:
            raise ProblemError(f"unknown coefficient {which!r}, expected one of {COEFFICIENTS}")
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        if pts.shape[1] != self.spatial_dim:
            raise ProblemError(f"points have dimension {pts.shape[1]}, problem has {self.spatial_dim}")
        if check_domain:
            if not -1e-12 <= t <= self.horizon + 1e-12:
                raise ProblemError("time outside [0, T]", {"t": t})
            outside = ~self.inside(pts)
            if np.any(outside):
                raise ProblemError("point outside the domain", {"t": t, "x": pts[np.argmax(outside)].tolist()})

        size = pts.shape[0]
        if which in ("f", "g"):
            theta, y, z = state if state is not None else (None, None, None)
            theta = np.zeros(size) if theta is None else np.broadcast_to(theta, (size,))
            y = np.zeros((size, self.spatial_dim)) if y is None else np.broadcast_to(y, (size, self.spatial_dim))
            z = np.zeros((size, self.noise_dim)) if z is None else np.broadcast_to(z, (size, self.noise_dim))
            raw = getattr(self, which)(t, pts, node, theta, y, z)
        elif which == "G":
            raw = self.G(pts, node)
        else:
            func = getattr(self, which)
            if func is None:
                raise ProblemError(f"coefficient {which!r} is not supplied")
            raw = func(t, pts, node)

        shape = {
            "a": (size, self.spatial_dim, self.spatial_dim),
            "sigma": (size, self.spatial_dim, self.noise_dim),
            "g": (size, self.spatial_dim),
        }.get(which, (size,))
        try:
            value = np.broadcast_to(np.asarray(raw, dtype=float), shape)
        except ValueError as exc:
            raise ProblemError(f"{which} returned shape {np.shape(raw)}, expected {shape}") from exc
        bad = ~np.isfinite(value.reshape(size, -1)).all(axis=1)
        if np.any(bad):
            p = int(np.argmax(bad))
            raise ProblemError(
                f"non-finite {which}",
                {"t": t, "x": pts[p].tolist(), "level": node.level, "node": node.index},
            )
        return value


def tabulate_process(tree: NoiseTree, fields: Sequence[np.ndarray], size: int) -> FieldMap:
    """Coefficient map reading precomputed per-level node fields (n_k, size) at grid points."""
    if len(fields) != tree.steps + 1:
        raise ProblemError(f"need fields for levels 0..{tree.steps}, got {len(fields)} levels")

    def lookup(t: float, x: np.ndarray, node: NodeContext) -> np.ndarray:
        if x.shape[0] != size:
            raise ProblemError(f"tabulated field lives on {size} grid points, asked for {x.shape[0]}")
        return fields[node.level][node.index]

    return lookup
