"""Small expression language for coefficient fields.

Expressions are parsed with the Python grammar and restricted to numbers,
arithmetic, a fixed set of names and a fixed set of functions; they are
evaluated with numpy against an environment of arrays.
"""
from __future__ import annotations

import ast
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping

import numpy as np


class ExpressionError(ValueError):
    def __init__(self, message: str, source: str, line: int = 1, column: int = 1):
        super().__init__(f"{message} at line {line}, column {column} in {source!r}")
        self.source = source
        self.line = line
        self.column = column


NODE_KEY = "__node__"

CONSTANTS = {"pi": np.pi, "e": np.e}

_BINARY = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


def _reduce(func: Callable) -> Callable:
    def apply(*args: Any) -> Any:
        if len(args) < 2:
            raise ValueError("needs at least two arguments")
        out = args[0]
        for arg in args[1:]:
            out = func(out, arg)
        return out

    return apply


def _indicator(value: Any, lo: Any, hi: Any) -> Any:
    return ((value >= lo) & (value <= hi)).astype(float)


FUNCTIONS: dict[str, tuple[Callable, int | None]] = {
    "exp": (np.exp, 1),
    "log": (np.log, 1),
    "sqrt": (np.sqrt, 1),
    "sin": (np.sin, 1),
    "cos": (np.cos, 1),
    "tanh": (np.tanh, 1),
    "abs": (np.abs, 1),
    "pos": (lambda v: np.maximum(v, 0.0), 1),
    "neg": (lambda v: np.maximum(-v, 0.0), 1),
    "min": (_reduce(np.minimum), None),
    "max": (_reduce(np.maximum), None),
    "ind": (_indicator, 3),
}

LOOKUP = "Wat"


def variable_names(spatial_dim: int, noise_dim: int, state: bool) -> set[str]:
    names = {"t", "x"} | {f"x{i + 1}" for i in range(spatial_dim)}
    names |= {f"W{r + 1}" for r in range(noise_dim)}
    if state:
        names |= {"u"} | {f"y{i + 1}" for i in range(spatial_dim)} | {f"z{r + 1}" for r in range(noise_dim)}
    return names


@dataclass(frozen=True)
class CompiledExpression:
    source: str
    tree: ast.Expression
    names: frozenset[str]
    lookups: bool

    @property
    def stochastic(self) -> bool:
        return self.lookups or any(name.startswith("W") for name in self.names)

    @property
    def uses_state(self) -> bool:
        return any(name == "u" or name[0] in "yz" for name in self.names)

    @property
    def uses_time(self) -> bool:
        return "t" in self.names

    @property
    def uses_space(self) -> bool:
        return any(name.startswith("x") for name in self.names)

    @property
    def constant(self) -> bool:
        return not self.names and not self.lookups

    def __call__(self, env: Mapping[str, Any]) -> np.ndarray:
        with np.errstate(all="ignore"):
            return np.asarray(_evaluate(self.tree.body, env, self.source), dtype=float)


def compile_expression(source: str | float | int, allowed: Iterable[str]) -> CompiledExpression:
    text = str(source).strip()
    if not text:
        raise ExpressionError("empty expression", text)
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"syntax error: {exc.msg}", text, exc.lineno or 1, exc.offset or 1) from exc
    allowed_names = set(allowed)
    callees = {id(node.func) for node in ast.walk(tree) if isinstance(node, ast.Call)}
    used: set[str] = set()
    lookups = False
    for node in ast.walk(tree):
        if isinstance(node, (ast.Expression, ast.Load)) or type(node) in _BINARY:
            continue
        if isinstance(node, (ast.BinOp, ast.UnaryOp, ast.USub, ast.UAdd)):
            continue
        if isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
                _fail(node, text, f"unsupported literal {node.value!r}")
            continue
        if isinstance(node, ast.Name):
            if node.id in CONSTANTS:
                continue
            if node.id in FUNCTIONS or node.id == LOOKUP:
                if id(node) not in callees:
                    _fail(node, text, f"function {node.id!r} used without arguments")
                continue
            if node.id not in allowed_names:
                _fail(node, text, f"unknown name {node.id!r}")
            used.add(node.id)
            continue
        if isinstance(node, ast.Call):
            _check_call(node, text)
            lookups = lookups or node.func.id == LOOKUP
            continue
        _fail(node, text, f"unsupported syntax {type(node).__name__}")
    return CompiledExpression(source=text, tree=tree, names=frozenset(used), lookups=lookups)


def _check_call(node: ast.Call, text: str) -> None:
    if not isinstance(node.func, ast.Name):
        _fail(node, text, "only plain function names can be called")
    name = node.func.id
    if node.keywords:
        _fail(node, text, f"{name}() takes positional arguments only")
    if name == LOOKUP:
        if len(node.args) != 2 or not all(
            isinstance(arg, ast.Constant) and isinstance(arg.value, int) and not isinstance(arg.value, bool)
            for arg in node.args
        ):
            _fail(node, text, "Wat(r, k) needs two integer literals")
        return
    if name not in FUNCTIONS:
        _fail(node, text, f"unknown function {name!r}")
    arity = FUNCTIONS[name][1]
    if arity is not None and len(node.args) != arity:
        _fail(node, text, f"{name}() takes {arity} argument(s), got {len(node.args)}")
    if arity is None and len(node.args) < 2:
        _fail(node, text, f"{name}() takes at least two arguments")


def _fail(node: ast.AST, text: str, message: str) -> None:
    raise ExpressionError(message, text, getattr(node, "lineno", 1), getattr(node, "col_offset", 0) + 1)


def _evaluate(node: ast.AST, env: Mapping[str, Any], text: str) -> Any:
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        if node.id in CONSTANTS:
            return CONSTANTS[node.id]
        if node.id not in env:
            _fail(node, text, f"name {node.id!r} has no value here")
        return env[node.id]
    if isinstance(node, ast.UnaryOp):
        operand = _evaluate(node.operand, env, text)
        return -operand if isinstance(node.op, ast.USub) else operand
    if isinstance(node, ast.BinOp):
        return _BINARY[type(node.op)](_evaluate(node.left, env, text), _evaluate(node.right, env, text))
    if isinstance(node, ast.Call):
        name = node.func.id
        if name == LOOKUP:
            context = env.get(NODE_KEY)
            if context is None:
                _fail(node, text, "Wat() needs a tree node")
            return context.w_at(node.args[0].value, node.args[1].value)
        func = FUNCTIONS[name][0]
        return func(*[_evaluate(arg, env, text) for arg in node.args])
    _fail(node, text, f"unsupported syntax {type(node).__name__}")
