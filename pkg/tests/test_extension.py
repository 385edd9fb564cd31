"""The extension: gamma, extended Hamiltonians, U^m G and oscillator chains."""

from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest

from hamext.expr import Sym, core, diff, evaluate, is_zero, parse_expr, simplify
from hamext.expr.numbers import make
from hamext.extension import (
    ExtensionError, ExtensionSpec, compatibility_nullspace, compatibility_residual, extend,
    first_integral_closed, first_integral_iterative, g_basis, gamma_expr, iterate_extend, u_apply,
)
from hamext.geometry import Chart
from hamext.phasepoly import eval_poly, natural_hamiltonian, poisson

from conftest import coords, params, poly

X, Y = coords("x", "y")
TH, PH = coords("th", "ph")
a3 = Sym("a3", "parameter")
E2 = Chart("E2", (X, Y), ((1, 0), (0, 1)), box={"x": (0.3, 1.5), "y": (0.3, 1.5)})
S2 = Chart("S2", (TH, PH), ((1, 0), (0, parse_expr("1/sin(th)^2", {"th": TH}))),
           box={"th": (0.25, 1.35), "ph": (0.2, 1.4)}, singular=(parse_expr("sin(th)", {"th": TH}),),
           family="sphere", curvature=core.ONE)


def _iso(m: int):
    """Isotropic oscillator with a3 = m L0 symbolic."""
    V = parse_expr("a3*(x^2 + y^2)", {"a3": a3, "x": X, "y": Y})
    L = natural_hamiltonian(E2.space, E2.metric_inv, V)
    spec = ExtensionSpec.default(m, c=0, L0=core.mul(a3, Fraction(1, m)))
    G = parse_expr("b1*x + b2*y", {"x": X, "y": Y, **params("b1", "b2")})
    return L, spec, G


# -------------------------------------------------------------------- gamma


@pytest.mark.parametrize("c, kappa", [(1, 1), (Fraction(1, 3), 9), (2, -4), (Fraction(1, 2), 0), (1, 3 + 2j),
                                      (Fraction(-1, 2), -1j)])
def test_gamma_solves_riccati(c, kappa):
    if isinstance(kappa, complex):
        kappa = core.Num(make(Fraction(kappa.real), Fraction(kappa.imag)))
    spec = ExtensionSpec(m=2, c=c, kappa=kappa)
    g = gamma_expr(spec)
    ode = core.add(diff(g, "u"), core.mul(spec.c, core.add(core.power(g, 2), spec.kappa)))
    for u in np.linspace(0.2, 1.3, 7):
        assert abs(evaluate(ode, {"u": u})) < 1e-12


def test_gamma_flat_branch():
    spec = ExtensionSpec.default(3, c=0, L0=1)
    assert spec.flat and spec.A == core.as_expr(Fraction(1, 3))
    assert is_zero(core.add(diff(gamma_expr(spec), "u"), spec.A))


def test_spec_defaults_and_validation():
    s = ExtensionSpec.default(4, c=Fraction(1, 4))
    assert s.kappa == core.as_expr(16) and s.branch == "curved"
    with pytest.raises(ExtensionError):
        ExtensionSpec(m=0)
    with pytest.raises(ExtensionError):
        ExtensionSpec(m=2, A=0)
    assert ExtensionSpec.default(2, c=0, L0=0).trivial


# ------------------------------------------------------ closed vs iterative


@pytest.mark.parametrize("m", range(1, 7))
def test_closed_equals_iterative_flat_symbolic(m):
    L, spec, G = _iso(m)
    assert first_integral_closed(spec, L, G) == first_integral_iterative(spec, L, G)


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_closed_equals_iterative_sphere(m):
    V = parse_expr("1/cos(th)^2", {"th": TH})
    L = natural_hamiltonian(S2.space, S2.metric_inv, V)
    spec = ExtensionSpec.default(m, c=Fraction(1, m))
    G = parse_expr("sin(th)*sin(ph)", {"th": TH, "ph": PH})
    a = first_integral_closed(spec, L, G)
    b = first_integral_iterative(spec, L, G)
    diffp = a - b
    pt = {"u": 0.7, "th": 0.6, "ph": 0.9, "p_u": 0.3, "p_th": -0.4, "p_ph": 0.8}
    assert abs(eval_poly(diffp, pt)) < 1e-10 * (1 + abs(eval_poly(a, pt)))


def test_u4g_of_isotropic_oscillator():
    L, spec, G = _iso(4)
    F = first_integral_closed(spec, L, G)
    big = F.space
    tab = {**big.symbol_table(), "a3": a3, **params("b1", "b2")}
    want = poly("G*p_u^4 - u*p_u^3*P - 3/4*a3*G*u^2*p_u^2 + a3/8*u^3*p_u*P + a3^2/64*G*u^4", big,
                {**tab, "G": G, "P": parse_expr("b1*p_x + b2*p_y", tab)})
    assert F == want


@pytest.mark.parametrize("m", [1, 2, 3])
def test_extension_integral_commutes_exactly(m):
    L, spec, G = _iso(m)
    ext = extend(L, spec, G)
    for name, I in ext.integrals:
        assert poisson(ext.H, I).is_zero(), name


def test_wrong_sign_breaks_commutation():
    L, spec, G = _iso(2)
    ext = extend(L, spec, G)
    F = ext.integral("U^2G")
    idx = next(iter(sorted(F.terms)))
    bad = type(F)(F.space, {**F.terms, idx: core.mul(-1, F.terms[idx])})
    assert not poisson(ext.H, bad).is_zero()


def test_extended_hamiltonian_shapes():
    L, spec, G = _iso(2)
    H = extend(L, spec, G).H
    # H = 1/2 p_u^2 + m A L + m L0 A^2 u^2 with A = 1/m and L0 = a3/m
    want = poly("p_u^2/2 + (p_x^2 + p_y^2)/2 + a3*(x^2 + y^2) + a3*u^2/4", H.space, {"a3": a3})
    assert H == want
    Ls = natural_hamiltonian(S2.space, S2.metric_inv, core.ZERO)
    Hc = extend(Ls, ExtensionSpec.default(2, c=Fraction(1, 2)), parse_expr("cos(th)", {"th": TH})).H
    # curved branch: m c L / S_kappa(c u)^2 with kappa = m^2, i.e. m^2 L / sin(u)^2
    coef = Hc.coefficient_of(p_th=2)
    assert abs(evaluate(coef, {"u": 0.4, "th": 0.5}) - 4 * 0.5 / np.sin(0.4) ** 2) < 1e-12


def test_u_apply_requires_u_coordinate():
    L, spec, G = _iso(2)
    with pytest.raises(ExtensionError):
        u_apply(spec, L, L)


# ----------------------------------------------------------- compatibility


def test_compatibility_nullspace_isotropic():
    V = parse_expr("x^2 + y^2", {"x": X, "y": Y})
    ans = g_basis(E2)
    ns = compatibility_nullspace(V, ans, 2, 0, Fraction(1, 2), params={})
    assert ns.dim == 2
    assert compatibility_nullspace(V, ans, 2, 0, Fraction(1, 3), params={}).dim == 0
    assert is_zero(simplify(compatibility_residual(V, ans, 2, 0, Fraction(1, 2),
                                                   G=parse_expr("x - 3*y", {"x": X, "y": Y}))))


def test_compatibility_nullspace_sphere():
    V = parse_expr("1/cos(th)^2", {"th": TH})
    ns = compatibility_nullspace(V, g_basis(S2), 2, Fraction(1, 2), 0, params={})
    # cos(th) is excluded, both sin(th) harmonics survive
    assert ns.dim == 2
    assert np.allclose(ns.basis[:, 0], 0)
    W = parse_expr("1/sin(th)^2", {"th": TH})
    ns = compatibility_nullspace(W, g_basis(S2), 2, Fraction(1, 2), 0, params={})
    assert ns.dim == 1 and np.allclose(ns.basis[0, 1:], 0)


# ------------------------------------------------------------------- chains


def test_chain_frequencies_and_names():
    steps = iterate_extend([2, 3], omega=Fraction(1, 2))
    assert [s.m for s in steps] == [2, 3]
    assert steps[0].omega_new == core.as_expr(Fraction(1, 8))
    assert steps[1].omega_new == core.as_expr(Fraction(1, 72))
    names = [n for n, _ in steps[-1].system.integrals]
    assert names == ["H3", "H2", "H1", "U1", "U2"]


@pytest.mark.parametrize("chain", [[1], [2, 2], [3, 1, 2], [2, 3, 4, 2]])
def test_chain_integrals_commute(chain):
    ext = iterate_extend(chain, omega=Fraction(3, 4))[-1].system
    for name, I in ext.integrals:
        assert poisson(ext.H, I).is_zero(), name


def test_chain_rejects_bad_input():
    with pytest.raises(ExtensionError):
        iterate_extend([])
    with pytest.raises(ExtensionError):
        iterate_extend([2, 0])
