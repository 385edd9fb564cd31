"""Momentum polynomials and Poisson brackets."""

from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from hamext.expr import Sym, parse_expr, simplify
from hamext.phasepoly import (
    ChartMismatch, MomentumError, MomentumPolynomial, PhaseSpace, eval_poly, natural_hamiltonian, phase_gradient,
    poisson,
)

from conftest import coords, poly

E2 = PhaseSpace("E2", coords("x", "y"))
E3 = PhaseSpace("E3", coords("x", "y", "z"))


def test_from_expr_splits_momenta():
    P = poly("x*p_x^2 + 3*p_x*p_y + sin(y)", E2)
    assert P.degree == 2
    assert P.coefficient_of(p_x=2) == Sym("x", "coordinate")
    assert simplify(P.coefficient_of(p_x=1, p_y=1)).key == "3"


def test_non_polynomial_momentum_rejected():
    with pytest.raises(MomentumError):
        poly("sin(p_x)", E2)
    with pytest.raises(MomentumError):
        poly("1/p_x", E2)


def test_canonical_brackets():
    x = poly("x", E2)
    px = poly("p_x", E2)
    py = poly("p_y", E2)
    # sign convention {F, G} = dF/dp dG/dq - dF/dq dG/dp, so {p, q} = 1
    assert poisson(px, x) == MomentumPolynomial.constant(E2, 1)
    assert poisson(x, px) == -poisson(px, x)
    assert poisson(x, py).is_zero()


def test_angular_momentum_commutes_with_isotropic_oscillator():
    H = poly("(p_x^2 + p_y^2)/2 + x^2 + y^2", E2)
    J = poly("x*p_y - y*p_x", E2)
    assert poisson(H, J).is_zero()


def test_natural_hamiltonian_on_sphere():
    th, ph = coords("th", "ph")
    S = PhaseSpace("S2", (th, ph))
    g = ((1, 0), (0, parse_expr("1/sin(th)^2", {"th": th})))
    H = natural_hamiltonian(S, g, parse_expr("cos(th)", {"th": th}))
    want = poly("p_th^2/2 + p_ph^2/(2*sin(th)^2) + cos(th)", S)
    assert H == want


def test_space_mismatch():
    with pytest.raises(ChartMismatch):
        poisson(poly("p_x", E2), poly("p_x", E3))


def test_lift_adds_coordinate():
    P = poly("x*p_y", E2)
    big = E2.extended(Sym("u", "coordinate"))
    Q = P.lift(big)
    assert Q.space == big
    assert poisson(Q, MomentumPolynomial.momentum(big, "u")).is_zero()


def test_json_roundtrip():
    P = poly("x*p_x^2/3 - 2*y*p_y + 7", E2)
    data = json.loads(P.dumps())
    assert data["vars"] == ["x", "y", "p_x", "p_y"]
    Q = MomentumPolynomial.from_json(data, E2, E2.symbol_table())
    assert Q == P


def test_phase_gradient_matches_finite_differences():
    P = poly("x^2*p_y + sin(y)*p_x^3", E2)
    pt = {"x": 0.3, "y": -0.4, "p_x": 0.7, "p_y": 1.1}
    g = phase_gradient(P, pt)
    h = 1e-6
    for k, name in enumerate(E2.phase_names):
        up = dict(pt, **{name: pt[name] + h})
        dn = dict(pt, **{name: pt[name] - h})
        assert abs(g[k] - (eval_poly(P, up) - eval_poly(P, dn)) / (2 * h)) < 1e-7


# ------------------------------------------------------------ property tests


def _coef():
    return st.sampled_from(["1", "x", "y", "x*y", "sin(x)", "2/3", "y^2 - 1", "cos(y)*x"])


def _mono():
    return st.tuples(st.integers(0, 2), st.integers(0, 2), _coef())


polys = st.lists(_mono(), min_size=1, max_size=4).map(
    lambda ms: poly(" + ".join(f"({c})*p_x^{a}*p_y^{b}" for a, b, c in ms), E2))
fast = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
PT = {"x": 0.31, "y": 0.77, "p_x": -0.4, "p_y": 0.9}


@fast
@given(polys, polys)
def test_bracket_antisymmetric(F, G):
    assert (poisson(F, G) + poisson(G, F)).is_zero()


@fast
@given(polys, polys, polys)
def test_jacobi_identity(F, G, K):
    total = poisson(F, poisson(G, K)) + poisson(G, poisson(K, F)) + poisson(K, poisson(F, G))
    assert abs(eval_poly(total, PT)) < 1e-9 * (1 + abs(eval_poly(poisson(F, poisson(G, K)), PT)))


@fast
@given(polys, polys, polys)
def test_leibniz_rule(F, G, K):
    lhs = poisson(F, G * K)
    rhs = poisson(F, G) * K + G * poisson(F, K)
    assert abs(eval_poly(lhs - rhs, PT)) < 1e-9 * (1 + abs(eval_poly(lhs, PT)))


@fast
@given(polys)
def test_program_matches_tree(F):
    X = np.array([[PT[n] for n in E2.phase_names]], dtype=np.complex128)
    assert abs(F.evaluate_many(X, E2.phase_names)[0] - eval_poly(F, PT)) < 1e-10 * (1 + abs(eval_poly(F, PT)))
