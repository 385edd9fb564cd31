"""Symbolic expression engine: trees, normal form, parser, compiler."""

from .core import (
    ARITY, EvaluationError, Expr, ExprError, Func, I, Num, ONE, PI, Pow, Sym, ZERO, Add, Mul,
    add, as_expr, c_kappa, cos, cosh, diff, evaluate, exp, func, mul, power, s_kappa, sin, sinh,
    sqrt, substitute, symbols,
)
from .normal import equivalent, expand_angles, is_zero, normalize, simplify, vanishes
from .parse import ParseError, UnknownIdentifier, parse_expr

__all__ = [
    "ARITY", "Add", "EvaluationError", "Expr", "ExprError", "Func", "I", "Mul", "Num", "ONE", "PI",
    "ParseError", "Pow", "Sym", "UnknownIdentifier", "ZERO", "add", "as_expr", "c_kappa", "cos",
    "cosh", "diff", "equivalent", "evaluate", "exp", "expand_angles", "func", "is_zero", "mul", "normalize",
    "parse_expr", "power", "s_kappa", "simplify", "sin", "sinh", "sqrt", "substitute", "symbols", "vanishes",
]
