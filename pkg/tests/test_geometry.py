"""Charts, Christoffel symbols, curvature and the Hessian equation."""

from __future__ import annotations

from fractions import Fraction

import pytest

from hamext.expr import is_zero, parse_expr, simplify
from hamext.geometry import (
    Chart, admissible_c, christoffel, curvature, hessian_residual, hessian_solution_dimension, metric,
)

from conftest import coords

X, Y = coords("x", "y")
TH, PH = coords("th", "ph")
X1, X2 = coords("x1", "x2")
EUCLID = Chart("E2", (X, Y), ((1, 0), (0, 1)), box={"x": (0.3, 1.5), "y": (0.3, 1.5)})
SPHERE = Chart("S2", (TH, PH), ((1, 0), (0, parse_expr("1/sin(th)^2", {"th": TH}))),
               box={"th": (0.25, 1.35), "ph": (0.2, 1.4)}, family="sphere")
HYPERBOLIC = Chart("H2", (X, Y), ((parse_expr("y^2", {"y": Y}), 0), (0, parse_expr("y^2", {"y": Y}))),
                   box={"x": (-1, 1), "y": (0.5, 2)})


def _ttw(chi, zeta) -> Chart:
    tab = {"x1": X1, "chi": chi, "zeta": zeta}
    g22 = parse_expr("1/(zeta*Sk(chi, x1)^2)", {k: v if not isinstance(v, (int, float)) else parse_expr(str(v))
                                                   for k, v in tab.items()})
    return Chart("ttw", (X1, X2), ((1, 0), (0, g22)), box={"x1": (0.2, 1.2), "x2": (0.2, 1.2)}, family="ttw")


def test_metric_inverse():
    g = metric(SPHERE)
    assert is_zero(g[1][1] - parse_expr("sin(th)^2", {"th": TH}))


def test_sphere_christoffels():
    G = christoffel(SPHERE)
    # Gamma^th_{ph ph} = -sin cos, Gamma^ph_{th ph} = cot
    want_a = parse_expr("-sin(th)*cos(th)", {"th": TH})
    want_b = parse_expr("cos(th)/sin(th)", {"th": TH})
    assert is_zero(G[0][1][1] - want_a)
    assert is_zero(G[1][0][1] - want_b)
    assert is_zero(G[1][1][0] - want_b)
    assert is_zero(G[0][0][0])


@pytest.mark.parametrize("chart, K", [(EUCLID, 0), (SPHERE, 1), (HYPERBOLIC, -1)])
def test_curvature(chart, K):
    rep = curvature(chart)
    assert rep.is_constant
    assert abs(rep.K - K) < 1e-10


@pytest.mark.parametrize("chi, zeta", [(1, 1), (-2, 0.5), (Fraction(1, 4), 3)])
def test_ttw_chart_curvature_is_chi(chi, zeta):
    rep = curvature(_ttw(chi, zeta))
    assert rep.is_constant
    assert abs(rep.K - chi) < 1e-9


def test_nonconstant_curvature_is_detected():
    bumpy = Chart("bump", (X, Y), ((1, 0), (0, parse_expr("1/(1 + x^4)", {"x": X}))),
                  box={"x": (0.3, 1.5), "y": (0.3, 1.5)})
    assert not curvature(bumpy).is_constant


def test_admissible_c():
    assert admissible_c(EUCLID, 3) == [0j]
    c = admissible_c(SPHERE, 4)
    assert abs(c[0] - 0.25) < 1e-12


def test_hessian_residual_of_tabulated_solutions():
    for text in ("cos(th)", "sin(ph)*sin(th)", "cos(ph)*sin(th)"):
        G = parse_expr(text, {"th": TH, "ph": PH})
        R = hessian_residual(G, SPHERE, 2, Fraction(1, 2))
        assert all(is_zero(simplify(R[i][j])) for i in range(2) for j in range(2))
    R = hessian_residual(parse_expr("cos(th)", {"th": TH}), SPHERE, 1, 2)
    assert not is_zero(simplify(R[0][0]))


SPHERE_FUNCS = [parse_expr(t, {"th": TH, "ph": PH}) for t in (
    "1", "cos(th)", "sin(th)*sin(ph)", "sin(th)*cos(ph)", "cos(th)^2", "sin(th)^2*cos(2*ph)",
    "sin(th)^2*sin(2*ph)", "sin(th)*cos(th)*cos(ph)", "sin(th)", "cos(th)^3", "ph")]
EUCLID_FUNCS = [parse_expr(t, {"x": X, "y": Y}) for t in ("1", "x", "y", "x^2", "x*y", "y^2", "x^3", "sin(x)")]


@pytest.mark.parametrize("mc, dim", [(1, 3), (2, 0), (Fraction(1, 2), 0), (-1, 0), (0, 0)])
def test_solution_space_on_sphere(mc, dim):
    assert hessian_solution_dimension(SPHERE, SPHERE_FUNCS, mc, exclude_constants=True) == dim


def test_solution_space_on_plane():
    assert hessian_solution_dimension(EUCLID, EUCLID_FUNCS, 0) == 3
    assert hessian_solution_dimension(EUCLID, EUCLID_FUNCS, 1) == 0


def test_asymmetric_metric_rejected():
    with pytest.raises(ValueError):
        Chart("bad", (X, Y), ((1, X), (0, 1)))
