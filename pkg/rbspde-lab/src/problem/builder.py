from __future__ import annotations

import hashlib
import json
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from src.lattice.tree import NodeContext
from src.problem.expressions import (
    NODE_KEY,
    CompiledExpression,
    ExpressionError,
    compile_expression,
    variable_names,
)
from src.problem.spec import FieldMap, ProblemError, ProblemSpec, StructuralConstants


Source = Any  # str | number | nested lists of those


def _environment(
    dim: int,
    t: float,
    x: np.ndarray,
    node: NodeContext,
    state: Optional[tuple[np.ndarray, np.ndarray, np.ndarray]] = None,
) -> dict[str, Any]:
    env: dict[str, Any] = {"t": t, "x": x[:, 0], NODE_KEY: node}
    for i in range(dim):
        env[f"x{i + 1}"] = x[:, i]
    for r, value in enumerate(node.w):
        env[f"W{r + 1}"] = value
    if state is not None:
        theta, y, z = state
        env["u"] = theta
        for i in range(dim):
            env[f"y{i + 1}"] = y[:, i]
        for r in range(z.shape[1]):
            env[f"z{r + 1}"] = z[:, r]
    return env


class _Compiler:
    def __init__(self, dim: int, noise_dim: int):
        self.dim = dim
        self.noise_dim = noise_dim
        self.compiled: dict[str, list[CompiledExpression]] = {}

    def scalar(self, key: str, source: Source, state: bool = False) -> CompiledExpression:
        if isinstance(source, (list, tuple)):
            raise ProblemError(f"{key}: expected a single expression, got a list")
        try:
            expr = compile_expression(source, variable_names(self.dim, self.noise_dim, state))
        except ExpressionError as exc:
            exc.key = key
            raise
        self.compiled.setdefault(key.split("[")[0], []).append(expr)
        return expr

    def matrix(self, key: str, source: Source, rows: int, cols: int, identity: bool) -> list[list[CompiledExpression]]:
        if not isinstance(source, (list, tuple)):
            expr = self.scalar(key, source)
            zero = self.scalar(key, 0)
            return [[expr if (not identity or i == j) else zero for j in range(cols)] for i in range(rows)]
        if len(source) != rows or any(not isinstance(row, (list, tuple)) or len(row) != cols for row in source):
            raise ProblemError(f"{key}: expected a {rows}x{cols} matrix of expressions")
        return [[self.scalar(f"{key}[{i}][{j}]", entry) for j, entry in enumerate(row)] for i, row in enumerate(source)]

    def vector(self, key: str, source: Source, length: int, state: bool) -> list[CompiledExpression]:
        if not isinstance(source, (list, tuple)):
            expr = self.scalar(key, source, state)
            return [expr] * length
        if len(source) != length:
            raise ProblemError(f"{key}: expected {length} expressions, got {len(source)}")
        return [self.scalar(f"{key}[{i}]", entry, state) for i, entry in enumerate(source)]

    def any(self, key: str, predicate: str) -> bool:
        return any(getattr(expr, predicate) for expr in self.compiled.get(key, []))


def _points(exprs: Sequence[CompiledExpression], env: Mapping[str, Any], size: int) -> np.ndarray:
    return np.stack([np.broadcast_to(expr(env), (size,)) for expr in exprs], axis=-1)


def spec_from_expressions(
    spatial_dim: int,
    noise_dim: int,
    horizon: float,
    domain: Sequence[Sequence[float]],
    constants: StructuralConstants,
    a: Source = 1,
    sigma: Source = 0,
    f: Source = 0,
    g: Source = 0,
    G: Source = 0,
    xi: Optional[Source] = None,
    xi_dom: Optional[Source] = None,
    f_plus: Optional[Source] = None,
    name: str = "problem",
) -> ProblemSpec:
    """Compile expression sources into a ProblemSpec (see README for the language)."""
    d, m = spatial_dim, noise_dim
    if len(domain) != d:
        raise ProblemError(f"domain has {len(domain)} axes, spatial_dim is {d}")
    c = _Compiler(d, m)
    a_exprs = c.matrix("a", a, d, d, identity=True)
    sigma_exprs = c.matrix("sigma", sigma, d, m, identity=False)
    f_expr = c.scalar("f", f, state=True)
    g_exprs = c.vector("g", g, d, state=True)
    G_expr = c.scalar("G", G)
    xi_expr = c.scalar("xi", xi) if xi is not None else None
    dom_expr = c.scalar("xi_dom", xi_dom) if xi_dom is not None else None
    plus_expr = c.scalar("f_plus", f_plus) if f_plus is not None else None

    def a_map(t: float, x: np.ndarray, node: NodeContext) -> np.ndarray:
        env = _environment(d, t, x, node)
        return np.stack([_points(row, env, x.shape[0]) for row in a_exprs], axis=1)

    def sigma_map(t: float, x: np.ndarray, node: NodeContext) -> np.ndarray:
        env = _environment(d, t, x, node)
        return np.stack([_points(row, env, x.shape[0]) for row in sigma_exprs], axis=1)

    def f_map(t, x, node, theta, y, z) -> np.ndarray:
        return np.broadcast_to(f_expr(_environment(d, t, x, node, (theta, y, z))), (x.shape[0],))

    def g_map(t, x, node, theta, y, z) -> np.ndarray:
        return _points(g_exprs, _environment(d, t, x, node, (theta, y, z)), x.shape[0])

    def G_map(x: np.ndarray, node: NodeContext) -> np.ndarray:
        return np.broadcast_to(G_expr(_environment(d, horizon, x, node)), (x.shape[0],))

    def field_map(expr: Optional[CompiledExpression]):
        if expr is None:
            return None

        def evaluate(t: float, x: np.ndarray, node: NodeContext) -> np.ndarray:
            return np.broadcast_to(expr(_environment(d, t, x, node)), (x.shape[0],))

        return evaluate

    stochastic = any(expr.stochastic for exprs in c.compiled.values() for expr in exprs)
    return ProblemSpec(
        spatial_dim=d,
        noise_dim=m,
        horizon=float(horizon),
        lower=tuple(float(axis[0]) for axis in domain),
        upper=tuple(float(axis[1]) for axis in domain),
        a=a_map,
        sigma=sigma_map,
        f=f_map,
        g=g_map,
        G=G_map,
        constants=constants,
        xi=field_map(xi_expr),
        xi_dom=field_map(dom_expr),
        f_plus=field_map(plus_expr),
        name=name,
        deterministic=not stochastic,
        state_free=not (c.any("f", "uses_state") or c.any("g", "uses_state")),
        static_operator=not any(
            c.any(key, "uses_time") or c.any(key, "stochastic") for key in ("a", "sigma")
        ),
        sources={"a": a, "sigma": sigma, "f": f, "g": g, "G": G, "xi": xi, "xi_dom": xi_dom, "f_plus": f_plus},
    )


def constants_from_mapping(raw: Mapping[str, float]) -> StructuralConstants:
    return StructuralConstants(
        lam=float(raw["lambda"]),
        Lam=float(raw["Lambda"]),
        kappa=float(raw.get("kappa", 0.0)),
        beta=float(raw.get("beta", 0.0)),
        rho=float(raw.get("rho", 2.0)),
        L=float(raw.get("L", 1.0)),
    )


def spec_from_config(problem: Mapping[str, Any]) -> ProblemSpec:
    """Build a spec from the ``problem`` section of a lab config (as a plain mapping)."""
    return spec_from_expressions(
        spatial_dim=int(problem["dim"]),
        noise_dim=int(problem["noise_dim"]),
        horizon=float(problem["horizon"]),
        domain=problem["domain"],
        constants=constants_from_mapping(problem["constants"]),
        a=problem.get("a", 1),
        sigma=problem.get("sigma", 0),
        f=problem.get("f", 0),
        g=problem.get("g", 0),
        G=problem.get("G", 0),
        xi=problem.get("xi"),
        xi_dom=problem.get("xi_dom"),
        f_plus=problem.get("f_plus"),
        name=str(problem.get("name", "problem")),
    )


def shifted_problem(problem: Mapping[str, Any], shifts: Mapping[str, Source]) -> dict[str, Any]:
    """Copy of a problem mapping with ``(orig) + (shift)`` for the scalar coefficients G, xi and f.

    A missing G or f is the zero default; a missing xi means no obstacle and cannot be shifted.
    """
    out = dict(problem)
    for key in ("G", "xi", "f"):
        shift = shifts.get(key)
        if shift is None or str(shift).strip() in ("0", "0.0"):
            continue
        base = out.get(key, None if key == "xi" else 0)
        if base is None:
            raise ProblemError(f"cannot shift {key}: the problem does not define it")
        out[key] = f"({base}) + ({shift})"
    return out


def spec_hash(raw: Mapping[str, Any]) -> str:
    canonical = json.dumps(raw, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def compile_field(source: Source, spatial_dim: int, noise_dim: int) -> FieldMap:
    """Standalone (t, x, node) map from one expression, e.g. a known exact solution."""
    expr = _Compiler(spatial_dim, noise_dim).scalar("field", source)

    def evaluate(t: float, x: np.ndarray, node: NodeContext) -> np.ndarray:
        return np.broadcast_to(expr(_environment(spatial_dim, t, x, node)), (x.shape[0],))

    return evaluate
