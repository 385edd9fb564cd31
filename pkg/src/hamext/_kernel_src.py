"""Kernel sources shared by the compiled and the pure-Python backends.

This file is executed twice by :mod:`hamext.kernels`: once with ``_JIT``
bound to ``numba.njit`` and once with the identity decorator.  It must only
use constructs supported by numba's nopython mode.
"""

import cmath
import math

import numpy as np

from hamext.expr.compile import (
    OP_ADD, OP_CONST, OP_COS, OP_COSH, OP_EXP, OP_INPUT, OP_MUL, OP_POWI, OP_POWQ, OP_SIN,
    OP_SINH, OP_SK,
)

_JIT = globals().get("_JIT") or (lambda f: f)  # noqa: F821 - injected by the loader

STATUS_OK, STATUS_UNDERFLOW, STATUS_MAXSTEPS, STATUS_NONFINITE = 0, 1, 2, 3


@_JIT
def eval_point(ops, a1, a2, fx, consts, x, regs):
    n = ops.shape[0]
    for j in range(n):
        op = ops[j]
        if op == OP_INPUT:
            regs[j] = x[a1[j]]
        elif op == OP_CONST:
            regs[j] = consts[a1[j]]
        elif op == OP_ADD:
            regs[j] = regs[a1[j]] + regs[a2[j]]
        elif op == OP_MUL:
            regs[j] = regs[a1[j]] * regs[a2[j]]
        elif op == OP_POWI:
            z = regs[a1[j]]
            k = a2[j]
            neg = k < 0
            if neg:
                k = -k
            r = 1.0 + 0.0j
            b = z
            while k > 0:
                if k & 1:
                    r = r * b
                b = b * b
                k >>= 1
            if neg:
                if r == 0:
                    r = complex(math.nan, math.nan)
                else:
                    r = 1.0 / r
            regs[j] = r
        elif op == OP_POWQ:
            z = regs[a1[j]]
            if z == 0:
                regs[j] = 0.0j if fx[j] > 0 else complex(math.nan, math.nan)
            else:
                regs[j] = cmath.exp(fx[j] * cmath.log(z))
        elif op == OP_SIN:
            regs[j] = cmath.sin(regs[a1[j]])
        elif op == OP_COS:
            regs[j] = cmath.cos(regs[a1[j]])
        elif op == OP_SINH:
            regs[j] = cmath.sinh(regs[a1[j]])
        elif op == OP_COSH:
            regs[j] = cmath.cosh(regs[a1[j]])
        elif op == OP_EXP:
            regs[j] = cmath.exp(regs[a1[j]])
        elif op == OP_SK:
            s = cmath.sqrt(regs[a1[j]])
            xx = regs[a2[j]]
            regs[j] = xx if s == 0 else cmath.sin(s * xx) / s
        else:  # OP_CK
            s = cmath.sqrt(regs[a1[j]])
            regs[j] = 1.0 + 0.0j if s == 0 else cmath.cos(s * regs[a2[j]])

@_JIT
def eval_many(ops, a1, a2, fx, consts, outs, X):
    npts = X.shape[0]
    res = np.empty((npts, outs.shape[0]), dtype=np.complex128)
    regs = np.empty(max(ops.shape[0], 1), dtype=np.complex128)
    for i in range(npts):
        eval_point(ops, a1, a2, fx, consts, X[i], regs)
        for k in range(outs.shape[0]):
            res[i, k] = regs[outs[k]]
    return res

@_JIT
def rhs(ops, a1, a2, fx, consts, outs, y, params, xbuf, regs, dy):
    n = y.shape[0]
    for i in range(n):
        xbuf[i] = y[i]
    for i in range(params.shape[0]):
        xbuf[n + i] = params[i]
    eval_point(ops, a1, a2, fx, consts, xbuf, regs)
    ok = True
    for k in range(n):
        v = regs[outs[k]].real
        if not math.isfinite(v):
            ok = False
        dy[k] = v
    return ok

@_JIT
def dopri(ops, a1, a2, fx, consts, outs, y0, params, t_end, rtol, atol, h0, max_steps,
          C, A, B5, E):
    n = y0.shape[0]
    ts = np.empty(max_steps + 1)
    ys = np.empty((max_steps + 1, n))
    xbuf = np.empty(n + params.shape[0], dtype=np.complex128)
    regs = np.empty(max(ops.shape[0], 1), dtype=np.complex128)
    K = np.empty((7, n))
    y = y0.copy()
    ytmp = np.empty(n)
    ynew = np.empty(n)
    t = 0.0
    ts[0] = 0.0
    ys[0] = y
    count = 1
    if not rhs(ops, a1, a2, fx, consts, outs, y, params, xbuf, regs, K[0]):
        return ts[:count], ys[:count], STATUS_NONFINITE, t
    h = h0
    if h <= 0.0:
        d0 = 0.0
        d1 = 0.0
        for i in range(n):
            sc = atol + rtol * abs(y[i])
            d0 += (y[i] / sc) ** 2
            d1 += (K[0, i] / sc) ** 2
        d0 = math.sqrt(d0 / n)
        d1 = math.sqrt(d1 / n)
        h = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
        h = min(h, t_end)
    steps = 0
    while t < t_end:
        if steps >= max_steps:
            return ts[:count], ys[:count], STATUS_MAXSTEPS, t
        if t + h > t_end:
            h = t_end - t
        if h < 1e-14 * max(1.0, abs(t)):
            return ts[:count], ys[:count], STATUS_UNDERFLOW, t
        good = True
        for s in range(1, 7):
            for i in range(n):
                acc = y[i]
                for r in range(s):
                    acc += h * A[s, r] * K[r, i]
                ytmp[i] = acc
            if not rhs(ops, a1, a2, fx, consts, outs, ytmp, params, xbuf, regs, K[s]):
                good = False
                break
        err = 0.0
        if good:
            for i in range(n):
                ynew[i] = ytmp[i]  # stage 7 point is the 5th-order solution
                e = 0.0
                for r in range(7):
                    e += E[r] * K[r, i]
                sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
                # error per unit step: the estimate h*e is divided by h
                err += (e / sc) ** 2
            err = math.sqrt(err / n)
        if not good or not math.isfinite(err):
            h *= 0.25
            steps += 1
            continue
        if err <= 1.0:
            t += h
            for i in range(n):
                y[i] = ynew[i]
                K[0, i] = K[6, i]
            ts[count] = t
            ys[count] = y
            count += 1
            fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.25))
        else:
            fac = max(0.2, 0.9 * err ** -0.25)
        h *= fac
        steps += 1
    return ts[:count], ys[:count], STATUS_OK, t
