"""Superintegrable extensions of natural Hamiltonians.

Given ``L = 1/2 g^{ij} p_i p_j + V`` on a constant-curvature chart and a
function ``G`` solving the Hessian equation, the package builds the
extended Hamiltonian ``H`` in one more degree of freedom, its polynomial
first integral ``U^m G`` and numerical certificates for all of it.

Subpackages and modules
-----------------------
expr
    Symbolic scalar expressions: parser, normal form, differentiation and
    compilation to vectorised programs.
phasepoly
    Polynomials in the momenta with expression coefficients; Poisson brackets.
geometry
    Charts, Christoffel symbols, curvature and the Hessian equation.
extension
    The extension itself, the operator ``U`` and the closed form of ``U^m G``.
catalog
    The shipped library of systems and the extensibility-table scanner.
verify
    Bracket sampling, trajectory drift, independence rank and certification.
cli
    The ``hamext`` command.
"""

from .expr import Expr, parse_expr, simplify
from .extension import (
    ExtendedSystem, ExtensionSpec, extend, first_integral_closed, first_integral_iterative, gamma_expr, iterate_extend,
)
from .geometry import Chart, hessian_residual
from .phasepoly import MomentumPolynomial, PhaseSpace, natural_hamiltonian, poisson
from .verify import (
    CertifyConfig, VerificationReport, bracket_residual_max, certify, conservation_drift, independence_rank,
)

__version__ = "0.1.0"

__all__ = [
    "CertifyConfig", "Chart", "Expr", "ExtendedSystem", "ExtensionSpec", "MomentumPolynomial", "PhaseSpace",
    "VerificationReport", "bracket_residual_max", "certify", "conservation_drift", "extend", "first_integral_closed",
    "first_integral_iterative", "gamma_expr", "hessian_residual", "independence_rank", "iterate_extend",
    "natural_hamiltonian", "parse_expr", "poisson", "simplify", "__version__",
]
