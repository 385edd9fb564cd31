"""Hot numeric kernels: bytecode evaluation and Hamiltonian-flow integration.

Two interchangeable implementations exist for each kernel.  With the numba
backend, a per-point register interpreter and a Dormand-Prince 5(4)
integrator are compiled with ``numba.njit``.  With the numpy backend,
evaluation runs each instruction vectorised across all sample points and
the integrator is the same algorithm executed as plain Python.  The backend
is chosen by :mod:`hamext._accel`.
"""

from __future__ import annotations

import importlib.util
import sys
from pathlib import Path

import numpy as np

from . import _accel
from . import _kernel_src as _py
from ._kernel_src import STATUS_MAXSTEPS, STATUS_NONFINITE, STATUS_OK, STATUS_UNDERFLOW  # noqa: F401
from .expr.compile import (
    OP_ADD, OP_CK, OP_CONST, OP_COS, OP_COSH, OP_EXP, OP_INPUT, OP_MUL, OP_POWI, OP_POWQ,
    OP_SIN, OP_SINH, OP_SK, Program,
)


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = np.zeros((7, 7))
_A[1, 0] = 1 / 5
_A[2, :2] = [3 / 40, 9 / 40]
_A[3, :3] = [44 / 45, -56 / 15, 32 / 9]
_A[4, :4] = [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]
_A[5, :5] = [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]
_A[6, :6] = [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]
_B5 = _A[6].copy()
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def _load(name: str, jit):
    """Execute the kernel sources as a separate module decorated with ``jit``."""
    path = Path(__file__).with_name("_kernel_src.py")
    spec = importlib.util.spec_from_file_location(name, path)
    mod = importlib.util.module_from_spec(spec)
    mod._JIT = jit
    sys.modules[name] = mod
    spec.loader.exec_module(mod)
    return mod


_nb = _load("hamext._kernels_nb", _accel.njit(cache=True, error_model="numpy")) if _accel.HAVE_NUMBA else None


def _eval_numpy(prog: Program, X: np.ndarray) -> np.ndarray:
    """Execute the program one instruction at a time, vectorised over points."""
    npts = X.shape[0]
    regs = np.empty((max(len(prog), 1), npts), dtype=np.complex128)
    ops, a1, a2, fx = prog.ops, prog.arg1, prog.arg2, prog.fexp
    with np.errstate(all="ignore"):
        for j in range(len(prog)):
            op = ops[j]
            if op == OP_INPUT:
                regs[j] = X[:, a1[j]]
            elif op == OP_CONST:
                regs[j] = prog.consts[a1[j]]
            elif op == OP_ADD:
                regs[j] = regs[a1[j]] + regs[a2[j]]
            elif op == OP_MUL:
                regs[j] = regs[a1[j]] * regs[a2[j]]
            elif op == OP_POWI:
                k = int(a2[j])
                z = regs[a1[j]]
                r = np.ones(npts, dtype=np.complex128)
                b = z.copy()
                kk = abs(k)
                while kk:
                    if kk & 1:
                        r = r * b
                    b = b * b
                    kk >>= 1
                if k < 0:
                    r = np.where(r == 0, complex(np.nan, np.nan), 1.0 / np.where(r == 0, 1.0, r))
                regs[j] = r
            elif op == OP_POWQ:
                z = regs[a1[j]]
                zero = z == 0
                safe = np.where(zero, 1.0, z)
                val = np.exp(fx[j] * np.log(safe))
                regs[j] = np.where(zero, 0.0 if fx[j] > 0 else complex(np.nan, np.nan), val)
            elif op == OP_SIN:
                regs[j] = np.sin(regs[a1[j]])
            elif op == OP_COS:
                regs[j] = np.cos(regs[a1[j]])
            elif op == OP_SINH:
                regs[j] = np.sinh(regs[a1[j]])
            elif op == OP_COSH:
                regs[j] = np.cosh(regs[a1[j]])
            elif op == OP_EXP:
                regs[j] = np.exp(regs[a1[j]])
            elif op in (OP_SK, OP_CK):
                s = np.sqrt(regs[a1[j]])
                x = regs[a2[j]]
                zero = s == 0
                ss = np.where(zero, 1.0, s)
                if op == OP_SK:
                    regs[j] = np.where(zero, x, np.sin(ss * x) / ss)
                else:
                    regs[j] = np.where(zero, 1.0 + 0.0j, np.cos(ss * x))
            else:  # pragma: no cover
                raise ValueError(f"bad opcode {op}")
    if len(prog.outputs) == 0:
        return np.empty((npts, 0), dtype=np.complex128)
    return regs[prog.outputs].T.copy()


def evaluate_program(prog: Program, X) -> np.ndarray:
    """Evaluate all outputs at each row of ``X`` (shape ``(npts, ninputs)``).

    Returns a complex array of shape ``(npts, noutputs)``; poles yield
    non-finite entries rather than exceptions.
    """
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.complex128)))
    if X.shape[1] != len(prog.inputs):
        raise ValueError(f"expected {len(prog.inputs)} inputs, got {X.shape[1]}")
    if _accel.backend() == "numba":
        return _nb.eval_many(prog.ops, prog.arg1, prog.arg2, prog.fexp, prog.consts, prog.outputs, X)
    return _eval_numpy(prog, X)


def integrate_flow(prog: Program, y0, params, t_end: float, rtol: float, atol: float | None = None,
                   max_steps: int = 200_000, h0: float = 0.0):
    """Integrate ``y' = f(y)`` where ``prog`` maps ``(y, params)`` to ``f``.

    Returns ``(ts, ys, status, t_fail)`` with every accepted step recorded.
    """
    y0 = np.ascontiguousarray(np.asarray(y0, dtype=np.float64))
    params = np.ascontiguousarray(np.asarray(params, dtype=np.complex128).reshape(-1))
    atol = rtol if atol is None else atol
    if len(prog.inputs) != y0.shape[0] + params.shape[0]:
        raise ValueError("program inputs must be state followed by parameters")
    args = (prog.ops, prog.arg1, prog.arg2, prog.fexp, prog.consts, prog.outputs, y0, params,
            float(t_end), float(rtol), float(atol), float(h0), int(max_steps), _C, _A, _B5, _E)
    if _accel.backend() == "numba":
        ts, ys, status, t = _nb.dopri(*args)
    else:
        ts, ys, status, t = _py.dopri(*args)
    return np.asarray(ts), np.asarray(ys), int(status), float(t)
