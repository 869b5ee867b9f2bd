"""
Small arithmetic expression grammar for custom coefficient models and
composite path functionals declared in experiment configs.

Expressions are parsed with the ``ast`` module and only a whitelisted
subset is accepted: numbers, named variables, + - * / **, unary minus and
calls to a fixed set of numpy functions. Evaluation is vectorised.
"""

from __future__ import annotations

import ast
import logging
import math
from typing import Callable, Dict, FrozenSet, Iterable, Mapping

import numpy as np

logger = logging.getLogger(__name__)


def _log_cosh(x):
    # log(cosh x) without overflow for large |x|
    return np.logaddexp(x, -x) - math.log(2.0)


FUNCTIONS: Dict[str, Callable] = {
    "exp": np.exp,
    "log": np.log,
    "cosh": np.cosh,
    "logcosh": _log_cosh,
    "sin": np.sin,
    "cos": np.cos,
    "tanh": np.tanh,
    "abs": np.abs,
    "sqrt": np.sqrt,
    "max": np.maximum,
    "min": np.minimum,
}

CONSTANTS: Dict[str, float] = {
    "pi": math.pi,
    "e": math.e,
}

_BINARY_OPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}

_UNARY_OPS = {
    ast.USub: np.negative,
    ast.UAdd: np.positive,
}


class ExpressionError(ValueError):
    """Raised when an expression does not belong to the grammar."""


class Expression:
    """A compiled, reentrant expression over a fixed set of variable names."""

    def __init__(self, source: str, variables: Iterable[str]):
        self.source = source
        self.allowed: FrozenSet[str] = frozenset(variables)
        try:
            tree = ast.parse(source.strip(), mode="eval")
        except SyntaxError as e:
            raise ExpressionError(f"cannot parse '{source}': {e.msg}") from None
        self.names: FrozenSet[str] = frozenset(self._check(tree.body))
        self._body = tree.body

    def _check(self, node: ast.AST) -> set:
        """Validate the tree and collect the variable names it reads."""
        if isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
                raise ExpressionError(f"only numeric literals are allowed, got {node.value!r}")
            return set()
        if isinstance(node, ast.Name):
            if node.id in CONSTANTS:
                return set()
            if node.id not in self.allowed:
                raise ExpressionError(
                    f"unknown name '{node.id}' (allowed: {', '.join(sorted(self.allowed))})"
                )
            return {node.id}
        if isinstance(node, ast.BinOp):
            if type(node.op) not in _BINARY_OPS:
                raise ExpressionError(f"operator {type(node.op).__name__} is not allowed")
            return self._check(node.left) | self._check(node.right)
        if isinstance(node, ast.UnaryOp):
            if type(node.op) not in _UNARY_OPS:
                raise ExpressionError(f"operator {type(node.op).__name__} is not allowed")
            return self._check(node.operand)
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
                raise ExpressionError(
                    f"unknown function in '{self.source}' (allowed: {', '.join(sorted(FUNCTIONS))})"
                )
            if node.keywords:
                raise ExpressionError("keyword arguments are not allowed")
            expected = 2 if node.func.id in ("max", "min") else 1
            if len(node.args) != expected:
                raise ExpressionError(f"{node.func.id}() takes {expected} argument(s)")
            names = set()
            for arg in node.args:
                names |= self._check(arg)
            return names
        raise ExpressionError(f"unsupported syntax: {type(node).__name__}")

    def _eval(self, node: ast.AST, env: Mapping[str, object]):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id in env:
                return env[node.id]
            return CONSTANTS[node.id]
        if isinstance(node, ast.BinOp):
            return _BINARY_OPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            return _UNARY_OPS[type(node.op)](self._eval(node.operand, env))
        args = [self._eval(arg, env) for arg in node.args]
        return FUNCTIONS[node.func.id](*args)

    def evaluate(self, env: Mapping[str, object]):
        """Evaluate with the given variable bindings (scalars or arrays)."""
        missing = self.names - set(env)
        if missing:
            raise ExpressionError(f"no value bound for {', '.join(sorted(missing))}")
        with np.errstate(all="ignore"):
            return self._eval(self._body, env)

    def __repr__(self) -> str:
        return f"Expression({self.source!r})"


def compile_expression(source: str, variables: Iterable[str]) -> Expression:
    """Parse and validate an expression; raises ExpressionError."""
    if not isinstance(source, str) or not source.strip():
        raise ExpressionError("expression must be a nonempty string")
    return Expression(source, variables)
