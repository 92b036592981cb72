from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import pandas as pd

from src.bspde.solution import BackwardSolution
from src.data.storage import save_frame
from src.grid.interpolate import interpolate_field, interpolate_gradient
from src.grid.spatial import SpatialGrid
from src.lattice.paths import sample_joint_paths
from src.lattice.tree import LatticeError, NoiseTree
from src.pathwise.rbsde import solve_reflected_bsde, start_chunks
from src.penalization.measure import DiscreteMeasure
from src.problem.spec import ProblemError, ProblemSpec
from src.quasilinear.continuation import theta_independent
from src.utils.logging import get_logger


logger = get_logger(__name__)

TestFunction = Callable[[float, np.ndarray], np.ndarray]


@dataclass
class EquivalenceReport:
    max_y: float
    mean_y: float
    max_z: float
    mean_z: float
    max_ztilde: float
    mean_ztilde: float
    samples: int
    discarded: int
    measure_lhs: float = float("nan")
    measure_rhs: float = float("nan")
    frame: pd.DataFrame = field(default_factory=pd.DataFrame, repr=False)

    @property
    def measure_gap(self) -> float:
        """|Σφ dμ - E∫∫φ(s, X_s) dK dx| relative to the larger side."""
        scale = max(abs(self.measure_lhs), abs(self.measure_rhs))
        if not np.isfinite(scale):
            return float("nan")
        return abs(self.measure_lhs - self.measure_rhs) / scale if scale > 0.0 else 0.0

    def summary(self) -> dict[str, float]:
        return {
            "max_y": self.max_y,
            "mean_y": self.mean_y,
            "max_z": self.max_z,
            "mean_z": self.mean_z,
            "max_ztilde": self.max_ztilde,
            "mean_ztilde": self.mean_ztilde,
            "samples": self.samples,
            "discarded": self.discarded,
            "measure_gap": self.measure_gap,
        }

    def save_csv(self, path: str | Path) -> Path:
        return save_frame(self.frame, path)


def bump(grid: SpatialGrid, width: float = 0.45) -> TestFunction:
    """Smooth compactly supported φ(x) = ∏(1 - r_i²)³₊ centred in the box."""
    lower, upper = np.asarray(grid.lower), np.asarray(grid.upper)
    center = 0.5 * (lower + upper)
    radius = width * (upper - lower)

    def phi(t: float, x: np.ndarray) -> np.ndarray:
        r = (np.atleast_2d(x) - center) / radius
        return np.prod(np.maximum(1.0 - r**2, 0.0) ** 3, axis=-1)

    return phi


def _check_setting(spec: ProblemSpec, w_tree: NoiseTree, joint: NoiseTree, grid: SpatialGrid) -> None:
    if not theta_independent(spec, w_tree, grid):
        raise ProblemError("the characteristic representation needs a = I, sigma = 0 and state-free f, g")
    if joint.steps != w_tree.steps or abs(joint.horizon - w_tree.horizon) > 1e-12 * w_tree.horizon:
        raise LatticeError("joint tree and W-tree must share the time grid")


def pushforward_gap(
    spec: ProblemSpec,
    measure: DiscreteMeasure,
    joint: NoiseTree,
    phi: Optional[TestFunction] = None,
) -> tuple[float, float]:
    """(Σ φ dμ, Σ_x h^d E∫φ(s, x + √2B_s) dK^x) with every grid point as a start."""
    grid, w_tree = measure.grid, measure.tree
    phi = phi or bump(grid)
    lhs = measure.integrate([
        np.broadcast_to(phi(w_tree.time(k), grid.points), (w_tree.level_size(k), grid.size))
        for k in range(w_tree.steps)
    ])
    rhs = 0.0
    for block in start_chunks(joint, grid.points):
        rb = solve_reflected_bsde(spec, block, joint)
        for k in range(joint.steps):
            X = rb.data.points[k]
            weights = phi(joint.time(k), X.reshape(-1, grid.dim)).reshape(X.shape[:2]) * rb.dK[k]
            rhs += float(np.dot(joint.probabilities(k), weights.sum(axis=1)))
    return float(lhs), rhs * grid.cell_volume


def equivalence_residual(
    spec: ProblemSpec,
    solution: BackwardSolution,
    joint: NoiseTree,
    samples: int = 32,
    seed: int = 0,
    starts: Optional[np.ndarray] = None,
    measure: Optional[DiscreteMeasure] = None,
    phi: Optional[TestFunction] = None,
) -> EquivalenceReport:
    """Compare (Y, Z, Z̃) with (u, v, √2∇u) at the characteristic x + √2B along sampled paths.

    Samples whose characteristic leaves the box are discarded and counted.
    """
    grid, w_tree = solution.grid, solution.tree
    _check_setting(spec, w_tree, joint, grid)
    N, d = w_tree.steps, grid.dim
    if starts is None:
        lower, upper = np.asarray(grid.lower), np.asarray(grid.upper)
        rng = np.random.default_rng(seed)
        starts = lower + (upper - lower) * rng.uniform(0.25, 0.75, size=(samples, d))
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    S = starts.shape[0]
    paths = sample_joint_paths(joint.w_dim, joint.b_dim, N, joint.horizon, S, seed)
    j_nodes = joint.locate(paths.signs())
    w_nodes = w_tree.locate(paths.w_signs())
    chars = starts[:, None, :] + np.sqrt(2.0) * paths.B
    keep = np.all(grid.contains(chars.reshape(-1, d)).reshape(S, N + 1), axis=1)
    discarded = int(S - keep.sum())
    if discarded:
        logger.warning("Characteristic samples left the box", {"discarded": discarded, "samples": S})

    rows = []
    err_y, err_z, err_zt = [], [], []
    kept = np.flatnonzero(keep)
    for block in start_chunks(joint, kept) if kept.size else []:
        rb = solve_reflected_bsde(spec, starts[block], joint)
        for local, s in enumerate(block):
            for k in range(N + 1):
                X = chars[s, k][None, :]
                j, w = int(j_nodes[s, k]), int(w_nodes[s, k])
                u_field = np.asarray(solution.u[k][w])
                y = float(rb.Y[k][j, local])
                u_interp = float(interpolate_field(grid, u_field, X)[0])
                err_y.append(abs(y - u_interp))
                rows.append({
                    **{f"x{i + 1}": starts[s, i] for i in range(d)},
                    "path": int(s),
                    "t": w_tree.time(k),
                    "Y": y,
                    "u_interp": u_interp,
                    "abs_err": err_y[-1],
                })
                if k == N:
                    continue
                v_field = np.asarray(solution.v[k][w])
                v_interp = np.array([interpolate_field(grid, v_field[r], X)[0] for r in range(v_field.shape[0])])
                err_z.append(float(np.max(np.abs(rb.Z[k][j, :, local] - v_interp))))
                grad = np.sqrt(2.0) * interpolate_gradient(grid, u_field, X)[0]
                err_zt.append(float(np.max(np.abs(rb.Ztilde[k][j, :, local] - grad))))

    def stats(values: list[float]) -> tuple[float, float]:
        return (float(np.max(values)), float(np.mean(values))) if values else (float("nan"), float("nan"))

    lhs, rhs = pushforward_gap(spec, measure, joint, phi) if measure is not None else (float("nan"), float("nan"))
    report = EquivalenceReport(
        *stats(err_y),
        *stats(err_z),
        *stats(err_zt),
        samples=S,
        discarded=discarded,
        measure_lhs=lhs,
        measure_rhs=rhs,
        frame=pd.DataFrame(rows),
    )
    logger.info("Equivalence residual", report.summary())
    return report
