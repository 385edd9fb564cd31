"""Compile expression DAGs to a flat register bytecode.

Common subexpressions (equal printed forms) share one register.  The
program is plain integer/float/complex numpy arrays so that both the
numba interpreter and the vectorised numpy interpreter in
:mod:`hamext.kernels` can execute it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numbers as nb
from .core import Add, Expr, Func, Mul, Num, Pow, Sym, _CONSTANTS

OP_INPUT, OP_CONST, OP_ADD, OP_MUL, OP_POWI, OP_POWQ = 0, 1, 2, 3, 4, 5
OP_SIN, OP_COS, OP_SINH, OP_COSH, OP_EXP, OP_SK, OP_CK = 6, 7, 8, 9, 10, 11, 12
_FUNC_OPS = {"sin": OP_SIN, "cos": OP_COS, "sinh": OP_SINH, "cosh": OP_COSH, "exp": OP_EXP,
             "Sk": OP_SK, "Ck": OP_CK}


@dataclass(frozen=True)
class Program:
    """Register bytecode: instruction ``j`` writes register ``j``."""

    inputs: tuple
    ops: np.ndarray  # int64 opcode per instruction
    arg1: np.ndarray  # int64 first operand (register, input slot or const slot)
    arg2: np.ndarray  # int64 second operand (register or integer exponent)
    fexp: np.ndarray  # float64 rational exponent for OP_POWQ
    consts: np.ndarray  # complex128 constant pool
    outputs: np.ndarray  # int64 register holding each output

    @property
    def n_outputs(self) -> int:
        return len(self.outputs)

    def __len__(self) -> int:
        return len(self.ops)


class UnboundSymbolError(KeyError):
    pass


def compile_exprs(exprs: Sequence[Expr], inputs: Sequence[str]) -> Program:
    """Compile ``exprs`` into one program reading ``inputs`` (symbol names)."""
    slot = {name: i for i, name in enumerate(inputs)}
    ops: list = []
    a1: list = []
    a2: list = []
    fx: list = []
    consts: list = []
    const_slot: dict = {}
    reg: dict = {}

    def emit(op, x=0, y=0, f=0.0) -> int:
        ops.append(op)
        a1.append(x)
        a2.append(y)
        fx.append(f)
        return len(ops) - 1

    def const(v: complex) -> int:
        key = (v.real, v.imag)
        if key not in const_slot:
            const_slot[key] = len(consts)
            consts.append(v)
        return emit(OP_CONST, const_slot[key])

    def go(e: Expr) -> int:
        k = e.key
        r = reg.get(k)
        if r is not None:
            return r
        if isinstance(e, Num):
            r = const(nb.to_complex(e.value))
        elif isinstance(e, Sym):
            if e.kind == "constant":
                r = const(complex(_CONSTANTS[e.name]))
            elif e.name in slot:
                r = emit(OP_INPUT, slot[e.name])
            else:
                raise UnboundSymbolError(e.name)
        elif isinstance(e, (Add, Mul)):
            parts = e.terms if isinstance(e, Add) else e.factors
            op = OP_ADD if isinstance(e, Add) else OP_MUL
            r = go(parts[0])
            for p in parts[1:]:
                r = emit(op, r, go(p))
        elif isinstance(e, Pow):
            b = go(e.base)
            if e.exp.denominator == 1:
                r = emit(OP_POWI, b, int(e.exp))
            else:
                r = emit(OP_POWQ, b, 0, float(e.exp))
        elif isinstance(e, Func):
            args = [go(a) for a in e.args]
            if len(args) == 1:
                r = emit(_FUNC_OPS[e.name], args[0])
            else:
                r = emit(_FUNC_OPS[e.name], args[0], args[1])
        else:
            raise TypeError(type(e))
        reg[k] = r
        return r

    outs = [go(e) for e in exprs]
    return Program(
        inputs=tuple(inputs),
        ops=np.asarray(ops, dtype=np.int64),
        arg1=np.asarray(a1, dtype=np.int64),
        arg2=np.asarray(a2, dtype=np.int64),
        fexp=np.asarray(fx, dtype=np.float64),
        consts=np.asarray(consts if consts else [0j], dtype=np.complex128),
        outputs=np.asarray(outs, dtype=np.int64),
    )
