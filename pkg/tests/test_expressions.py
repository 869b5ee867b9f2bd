import numpy as np
import pytest

from src.expressions import ExpressionError, compile_expression


def test_evaluates_vectorised():
    expr = compile_expression("0.5 * x ** 2 + max(x, 0) - logcosh(x)", ("x",))
    x = np.array([-1.0, 0.0, 2.0])
    expected = 0.5 * x ** 2 + np.maximum(x, 0) - np.log(np.cosh(x))
    np.testing.assert_allclose(expr.evaluate({"x": x}), expected)


def test_logcosh_does_not_overflow():
    value = compile_expression("logcosh(x)", ("x",)).evaluate({"x": 1000.0})
    assert value == pytest.approx(1000.0 - np.log(2.0))


def test_collects_names_and_constants():
    expr = compile_expression("x * mean_sin2 + pi - e", ("x", "mean_sin2", "t"))
    assert expr.names == {"x", "mean_sin2"}


@pytest.mark.parametrize("source", [
    "__import__('os')",
    "x.real",
    "x if x else 0",
    "foo(x)",
    "y + 1",
    "max(x)",
    "x // 2",
    "'text'",
    "True",
    "",
])
def test_rejects_outside_grammar(source):
    with pytest.raises(ExpressionError):
        compile_expression(source, ("x",))


def test_missing_binding():
    with pytest.raises(ExpressionError):
        compile_expression("x + t", ("x", "t")).evaluate({"x": 1.0})
