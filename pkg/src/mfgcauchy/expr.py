"""Closed-form coefficient expressions used in scenario configs.

Grammar: numbers, the variables allowed by the caller, ``pi``, the binary
operators ``+ - * / **`` (``^`` is accepted as a synonym for ``**``), unary
minus, parentheses and the functions ``sin cos tanh exp``. Anything else
is rejected before the string reaches sympy.
"""

from __future__ import annotations

import ast

import numpy as np
import sympy

FUNCTIONS = {"sin": sympy.sin, "cos": sympy.cos, "tanh": sympy.tanh, "exp": sympy.exp}
ALL_VARIABLES = ("x1", "x2", "y2", "t", "z1", "z2")
SYMBOLS = {name: sympy.Symbol(name, real=True) for name in ALL_VARIABLES}

_ALLOWED_NODES = (
    ast.Expression,
    ast.BinOp,
    ast.UnaryOp,
    ast.Call,
    ast.Name,
    ast.Constant,
    ast.Load,
    ast.Add,
    ast.Sub,
    ast.Mult,
    ast.Div,
    ast.Pow,
    ast.USub,
    ast.UAdd,
)


class ExpressionError(ValueError):
    pass


def parse(text: str, variables: tuple[str, ...] = ALL_VARIABLES) -> sympy.Expr:
    """Validate ``text`` against the grammar and return a sympy expression."""
    src = str(text).replace("^", "**").strip()
    if not src:
        raise ExpressionError("empty expression")
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ExpressionError(f"{type(node).__name__} not allowed in {text!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ExpressionError(f"non-numeric constant in {text!r}")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
                raise ExpressionError(f"unknown function in {text!r}")
            if len(node.args) != 1 or node.keywords:
                raise ExpressionError(f"functions take exactly one argument in {text!r}")
        if isinstance(node, ast.Name) and node.id not in FUNCTIONS and node.id != "pi" and node.id not in variables:
            raise ExpressionError(f"unknown name {node.id!r} in {text!r}; allowed: {', '.join(variables)}")
    local = {**FUNCTIONS, "pi": sympy.pi, **{v: SYMBOLS[v] for v in variables}}
    return sympy.sympify(src, locals=local)


def lambdify(expr: sympy.Expr, variables: tuple[str, ...]):
    """Vectorised numpy callable of ``expr`` in the given argument order.

    The result always broadcasts to the common shape of its arguments, so a
    constant expression still returns an array.
    """
    fn = sympy.lambdify([SYMBOLS[v] for v in variables], expr, modules="numpy")

    def call(*args):
        arrays = [np.asarray(a, dtype=float) for a in args]
        shape = np.broadcast_shapes(*(a.shape for a in arrays)) if arrays else ()
        return np.broadcast_to(np.asarray(fn(*arrays), dtype=float), shape).copy()

    call.expr = expr
    return call


def derivative(expr: sympy.Expr, var: str) -> sympy.Expr:
    return sympy.diff(expr, SYMBOLS[var])


def depends_on(expr: sympy.Expr, var: str) -> bool:
    return SYMBOLS[var] in expr.free_symbols
