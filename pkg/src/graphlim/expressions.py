"""Vectorised numeric expressions from config strings, e.g. ``"exp(-(x - y)**2)"``.

Only arithmetic, comparisons, conditionals and a fixed set of numpy functions
are accepted; attribute access, subscripts, lambdas and comprehensions are
rejected when the expression is compiled.
"""

from __future__ import annotations

import ast
from typing import Callable, Sequence

import numpy as np

FUNCTIONS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "arctan": np.arctan,
    "sinh": np.sinh, "cosh": np.cosh, "tanh": np.tanh,
    "exp": np.exp, "expm1": np.expm1, "log": np.log, "log1p": np.log1p,
    "sqrt": np.sqrt, "abs": np.abs, "sign": np.sign,
    "minimum": np.minimum, "maximum": np.maximum, "clip": np.clip,
    "where": np.where, "floor": np.floor,
}
CONSTANTS = {"pi": np.pi, "e": np.e}

_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.BoolOp, ast.Compare, ast.IfExp,
    ast.Call, ast.Name, ast.Load, ast.Constant,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.Mod, ast.FloorDiv,
    ast.USub, ast.UAdd, ast.And, ast.Or, ast.Not,
    ast.Lt, ast.LtE, ast.Gt, ast.GtE, ast.Eq, ast.NotEq,
)


class ExpressionError(ValueError):
    pass


def compile_expression(source: str, variables: Sequence[str]) -> Callable[..., np.ndarray]:
    """Compile ``source`` into a function of the named ``variables`` (positional)."""
    if not isinstance(source, str):
        raise ExpressionError(f"expression must be a string, got {type(source).__name__}")
    try:
        tree = ast.parse(source, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse expression {source!r}: {exc.msg}") from None
    allowed = set(variables) | set(FUNCTIONS) | set(CONSTANTS)
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ExpressionError(f"disallowed syntax {type(node).__name__} in {source!r}")
        if isinstance(node, ast.Name) and node.id not in allowed:
            raise ExpressionError(f"unknown name {node.id!r} in {source!r}")
        if isinstance(node, ast.Call) and not (
            isinstance(node.func, ast.Name) and node.func.id in FUNCTIONS
        ):
            raise ExpressionError(f"only whitelisted functions may be called in {source!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ExpressionError(f"only numeric literals are allowed in {source!r}")
    code = compile(tree, "<expression>", "eval")
    names = tuple(variables)

    def func(*args):
        if len(args) != len(names):
            raise TypeError(f"expected {len(names)} arguments {names}, got {len(args)}")
        scope = dict(FUNCTIONS)
        scope.update(CONSTANTS)
        scope.update(zip(names, (np.asarray(a, dtype=float) for a in args)))
        with np.errstate(all="ignore"):
            return np.asarray(eval(code, {"__builtins__": {}}, scope), dtype=float)

    func.source = source
    return func
