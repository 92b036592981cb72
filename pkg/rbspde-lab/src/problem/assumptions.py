"""Sampling checks of the standing structural assumptions.

Coefficients are arbitrary maps, so every check draws (t, x, node, state)
samples from a seeded generator and reports the worst case it saw.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from src.bspde.checks import dominating_norm
from src.grid.spatial import SpatialGrid, build_grid
from src.lattice.tree import NoiseTree, build_tree
from src.problem.spec import ProblemError, ProblemSpec
from src.utils.logging import get_logger


logger = get_logger(__name__)

RHO_GRID = (1.25, 1.5, 2.0, 3.0, 4.0, 8.0)
NORM_GRID_POINTS = 17


@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    value: float
    bound: float
    reason: str = ""
    witness: Optional[dict] = None


@dataclass
class AssumptionReport:
    checks: list[AssumptionCheck]
    sample_count: int
    data_norms: dict[str, float] = field(default_factory=dict)
    rho_feasibility: dict[float, bool] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def failures(self) -> list[AssumptionCheck]:
        return [check for check in self.checks if not check.passed]

    def check(self, name: str) -> AssumptionCheck:
        for item in self.checks:
            if item.name == name:
                return item
        raise KeyError(name)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([
            {
                "check": c.name,
                "passed": c.passed,
                "value": c.value,
                "bound": c.bound,
                "reason": c.reason,
                "witness": "" if c.witness is None else repr(c.witness),
            }
            for c in self.checks
        ])


@dataclass
class _Sample:
    t: float
    x: np.ndarray
    node: object

    def witness(self, **extra: object) -> dict:
        out = {"t": self.t, "x": self.x.tolist(), "level": self.node.level, "node": self.node.index}
        out.update(extra)
        return out


def _draw(spec: ProblemSpec, tree: NoiseTree, rng: np.random.Generator, count: int) -> list[_Sample]:
    samples = []
    lo, hi = np.asarray(spec.lower), np.asarray(spec.upper)
    for _ in range(count):
        level = int(rng.integers(0, tree.steps + 1))
        index = int(rng.integers(0, tree.level_size(level)))
        x = lo + (hi - lo) * rng.random(spec.spatial_dim)
        samples.append(_Sample(t=tree.time(level), x=x, node=tree.context(level, index)))
    return samples


def _state(spec: ProblemSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return (
        rng.normal(size=1),
        rng.normal(size=(1, spec.spatial_dim)),
        rng.normal(size=(1, spec.noise_dim)),
    )


def _perturb(state, which: int, rng: np.random.Generator):
    out = [np.array(part, copy=True) for part in state]
    out[which] = out[which] + rng.normal(size=out[which].shape)
    return tuple(out)


def _lipschitz_ratio(spec, which: str, sample: _Sample, first, second, arg: int) -> float:
    v1 = spec.evaluate(which, sample.t, sample.x[None, :], sample.node, first)
    v2 = spec.evaluate(which, sample.t, sample.x[None, :], sample.node, second)
    gap = float(np.linalg.norm(np.ravel(first[arg]) - np.ravel(second[arg])))
    if gap == 0.0:
        return 0.0
    return float(np.linalg.norm(np.ravel(v1 - v2))) / gap


def validate_assumptions(
    spec: ProblemSpec,
    sample_budget: int = 256,
    seed: int = 0,
    tree: Optional[NoiseTree] = None,
    rho_grid: Sequence[float] = RHO_GRID,
    tol: float = 1e-9,
    grid: Optional[SpatialGrid] = None,
) -> AssumptionReport:
    if sample_budget < 1:
        raise ValueError(f"sample_budget must be at least 1, got {sample_budget}")
    const = spec.constants
    if tree is None:
        tree = build_tree(spec.noise_dim, 4, spec.horizon, recombine=spec.noise_dim == 1)
    rng = np.random.default_rng(seed)
    samples = _draw(spec, tree, rng, sample_budget)
    checks: list[AssumptionCheck] = []

    try:
        eig_lo, eig_hi, low_w, high_w, sigma_sq = _ellipticity_scan(spec, samples)
    except ProblemError as exc:
        logger.warning("Coefficient evaluation failed", {"error": str(exc)})
        checks.append(AssumptionCheck("finite", False, float("nan"), float("nan"), str(exc), exc.witness))
        return AssumptionReport(checks=checks, sample_count=sample_budget)

    checks.append(AssumptionCheck(
        "ellipticity_lower", eig_lo >= const.lam - tol, eig_lo, const.lam,
        "" if eig_lo >= const.lam - tol else "min eigenvalue of 2a - rho*sigma*sigma^T below lambda", low_w,
    ))
    checks.append(AssumptionCheck(
        "ellipticity_upper", eig_hi <= const.Lam + tol, eig_hi, const.Lam,
        "" if eig_hi <= const.Lam + tol else "max eigenvalue of 2a - rho*sigma*sigma^T above Lambda", high_w,
    ))

    lipschitz = [
        ("lipschitz_f_u", "f", 0, const.L),
        ("lipschitz_f_y", "f", 1, const.L),
        ("lipschitz_f_z", "f", 2, const.L),
        ("lipschitz_g_u", "g", 0, const.L),
        ("lipschitz_g_y", "g", 1, const.kappa / 2.0),
        ("lipschitz_g_z", "g", 2, float(np.sqrt(const.beta))),
    ]
    try:
        for name, which, arg, bound in lipschitz:
            worst, witness = 0.0, None
            for sample in samples:
                first = _state(spec, rng)
                second = _perturb(first, arg, rng)
                ratio = _lipschitz_ratio(spec, which, sample, first, second, arg)
                if ratio > worst:
                    worst, witness = ratio, sample.witness(state=[np.ravel(p).tolist() for p in first])
            ok = worst <= bound * (1.0 + 1e-9) + tol
            checks.append(AssumptionCheck(
                name, ok, worst, bound, "" if ok else f"{which} difference quotient exceeds its Lipschitz bound",
                None if ok else witness,
            ))
    except ProblemError as exc:
        checks.append(AssumptionCheck("finite", False, float("nan"), float("nan"), str(exc), exc.witness))

    margin = const.margin()
    checks.append(AssumptionCheck(
        "parabolicity_margin", margin > 0, margin, 0.0,
        "" if margin > 0 else "lambda - kappa - rho'*beta > 0 violated",
        None if margin > 0 else {"lambda": const.lam, "kappa": const.kappa, "rho'": const.rho_prime, "beta": const.beta},
    ))

    if spec.xi is not None and spec.xi_dom is not None:
        worst, witness = -np.inf, None
        for sample in samples:
            gap = float(
                spec.evaluate("xi", sample.t, sample.x[None, :], sample.node)[0]
                - spec.evaluate("xi_dom", sample.t, sample.x[None, :], sample.node)[0]
            )
            if gap > worst:
                worst, witness = gap, sample.witness()
        ok = worst <= tol
        checks.append(AssumptionCheck(
            "obstacle_dominated", ok, worst, 0.0, "" if ok else "xi exceeds the dominating field", None if ok else witness,
        ))

    feasibility = {}
    for rho in sorted(set(rho_grid) | {const.rho}):
        low = min(_min_eig(2.0 * a - rho * ss) for a, ss in sigma_sq)
        feasibility[float(rho)] = bool(low >= const.lam - tol and const.margin(rho) > 0)

    report = AssumptionReport(
        checks=checks,
        sample_count=sample_budget,
        data_norms=_data_norms(spec, samples, tree, grid),
        rho_feasibility=feasibility,
    )
    logger.info("Assumptions checked", {"passed": report.passed, "failures": [c.name for c in report.failures()]})
    return report


def _min_eig(matrix: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (matrix + matrix.T))[0])


def _ellipticity_scan(spec: ProblemSpec, samples: list[_Sample]):
    rho = spec.constants.rho
    eig_lo, eig_hi = np.inf, -np.inf
    low_w = high_w = None
    pairs = []
    for sample in samples:
        a = spec.evaluate("a", sample.t, sample.x[None, :], sample.node)[0]
        sigma = spec.evaluate("sigma", sample.t, sample.x[None, :], sample.node)[0]
        ss = sigma @ sigma.T
        pairs.append((a, ss))
        matrix = 2.0 * a - rho * ss
        eigs = np.linalg.eigvalsh(0.5 * (matrix + matrix.T))
        if eigs[0] < eig_lo:
            eig_lo, low_w = float(eigs[0]), sample.witness(eigenvalue=float(eigs[0]))
        if eigs[-1] > eig_hi:
            eig_hi, high_w = float(eigs[-1]), sample.witness(eigenvalue=float(eigs[-1]))
    return eig_lo, eig_hi, low_w, high_w, pairs


def _data_norms(
    spec: ProblemSpec, samples: list[_Sample], tree: NoiseTree, grid: Optional[SpatialGrid]
) -> dict[str, float]:
    """Root-mean-square of f0, |g0| and G over the samples (G on terminal nodes).

    ξ̌ enters through the norm of its backward solve, on ``grid`` or a coarse default grid.
    """
    last = tree.level_size(tree.steps)
    terminal = [tree.context(tree.steps, s.node.index % last) for s in samples]
    f0 = np.array([spec.evaluate("f", s.t, s.x[None, :], s.node)[0] for s in samples])
    g0 = np.array([np.linalg.norm(spec.evaluate("g", s.t, s.x[None, :], s.node)[0]) for s in samples])
    G = np.array([spec.evaluate("G", spec.horizon, s.x[None, :], node)[0] for s, node in zip(samples, terminal)])
    norms = {
        "f0": float(np.sqrt(np.mean(f0**2))),
        "g0": float(np.sqrt(np.mean(g0**2))),
        "G": float(np.sqrt(np.mean(G**2))),
    }
    if spec.xi_dom is not None:
        if grid is None:
            bounds = [[lo, hi] for lo, hi in zip(spec.lower, spec.upper)]
            grid = build_grid(bounds, [NORM_GRID_POINTS] * spec.spatial_dim)
        norms["xi_dom"] = dominating_norm(spec, tree, grid)
    return norms
