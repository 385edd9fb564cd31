"""Numeric kernels: numba and numpy backends agree; the integrator converges."""

from __future__ import annotations

import numpy as np
import pytest

from hamext import _accel, kernels
from hamext.expr import parse_expr
from hamext.expr.compile import compile_exprs
from hamext.phasepoly import PhaseSpace
from hamext.verify import hamilton_program

from conftest import coords, poly

needs_numba = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")


@pytest.fixture
def backend():
    """Restore the backend after a test switches it."""
    old = _accel.backend()
    yield _accel.set_backend
    _accel.set_backend(old)


def _program():
    x, y, k = coords("x", "y", "k")
    tab = {"x": x, "y": y, "k": k}
    exprs = [parse_expr(t, tab) for t in (
        "x^2*y - 3/x", "sin(x)*cosh(y) + exp(-x*y)", "x^(1/2) + y^(-3/2)", "Sk(k, x)/Ck(k, y)", "sinh(x)*cos(y)^3")]
    return compile_exprs(exprs, ["x", "y", "k"])


@needs_numba
def test_backends_agree_on_evaluation(backend):
    prog = _program()
    rng = np.random.default_rng(5)
    X = rng.uniform(-1.5, 1.5, (200, 3)) + 1j * rng.uniform(-0.3, 0.3, (200, 3))
    X[0, 0] = 0  # a pole: both backends must report it as non-finite
    backend("numba")
    a = kernels.evaluate_program(prog, X)
    backend("numpy")
    b = kernels.evaluate_program(prog, X)
    fin = np.isfinite(a)
    assert np.array_equal(fin, np.isfinite(b))
    assert not fin[0, 0]
    assert np.max(np.abs(a[fin] - b[fin]) / (1 + np.abs(a[fin]))) < 1e-13


def _oscillator(n: int = 2):
    names = [f"x{k}" for k in range(1, n + 1)]
    space = PhaseSpace(f"E{n}", coords(*names))
    text = " + ".join(f"p_{q}^2/2 + {k + 1}^2*{q}^2/2" for k, q in enumerate(names))
    return poly(text, space)


@needs_numba
def test_backends_agree_on_integration(backend):
    H = _oscillator()
    prog = hamilton_program(H, [])
    y0 = np.array([0.3, -0.2, 0.1, 0.5])
    backend("numba")
    ta, ya, sa, _ = kernels.integrate_flow(prog, y0, [], 5.0, 1e-10)
    backend("numpy")
    tb, yb, sb, _ = kernels.integrate_flow(prog, y0, [], 5.0, 1e-10)
    assert sa == sb == kernels.STATUS_OK
    assert len(ta) == len(tb)
    assert np.max(np.abs(ya - yb)) < 1e-12


def _exact(y0, t, n: int = 2):
    q0, p0 = y0[:n], y0[n:]
    w = np.arange(1, n + 1)
    q = q0 * np.cos(w * t) + p0 / w * np.sin(w * t)
    p = -q0 * w * np.sin(w * t) + p0 * np.cos(w * t)
    return np.concatenate([q, p])


def test_integrator_matches_exact_solution():
    H = _oscillator()
    prog = hamilton_program(H, [])
    y0 = np.array([0.3, -0.2, 0.1, 0.5])
    errs = []
    for tol in (1e-6, 1e-8, 1e-10):
        ts, ys, status, _ = kernels.integrate_flow(prog, y0, [], 10.0, tol)
        assert status == kernels.STATUS_OK
        assert ts[-1] == pytest.approx(10.0)
        errs.append(np.max(np.abs(ys[-1] - _exact(y0, ts[-1]))))
    assert errs[2] < 1e-8
    # tightening the tolerance by 100 gains well over a factor of 10
    assert errs[0] / errs[1] > 10 and errs[1] / errs[2] > 10


def test_integrator_reports_failure_time():
    # free fall into 1/x: the state blows up before t = 5
    space = PhaseSpace("E1", coords("x"))
    H = poly("p_x^2/2 - 1/x", space)
    prog = hamilton_program(H, [])
    ts, ys, status, t_fail = kernels.integrate_flow(prog, np.array([1.0, 0.0]), [], 5.0, 1e-10, max_steps=20000)
    assert status != kernels.STATUS_OK
    assert 0 < t_fail < 5.0


def test_program_input_count_checked():
    prog = _program()
    with pytest.raises(ValueError):
        kernels.evaluate_program(prog, np.zeros((2, 2)))


def test_env_flag_selects_numpy(monkeypatch):
    import importlib

    monkeypatch.setenv("HAMEXT_DISABLE_NUMBA", "1")
    mod = importlib.reload(_accel)
    try:
        assert mod.backend() == "numpy"
    finally:
        monkeypatch.delenv("HAMEXT_DISABLE_NUMBA")
        importlib.reload(_accel)
