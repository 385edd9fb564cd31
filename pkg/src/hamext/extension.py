"""Superintegrable extensions of natural Hamiltonians.

Given ``L = 1/2 g^{ij} p_i p_j + V`` on a constant-curvature chart and a
function ``G`` solving

* the Hessian equation ``nabla_i nabla_j G + m c g_{ij} G = 0`` and
* the compatibility equation ``g^{ij} dV_i dG_j - 2m(cV + L0) G = 0``,

the Hamiltonian on the chart extended by ``(u, p_u)``

* ``H = 1/2 p_u^2 + m A (L + V0) + m L0 A^2 (u + u0)^2``  when ``c = 0``,
* ``H = 1/2 p_u^2 + m (c L + L0) / S_kappa(c u + u0)^2 + W0``  otherwise,

admits the first integral ``F = U^m G`` with ``U = p_u + gamma(u) X_L`` and
``gamma = C_kappa/S_kappa (c u + u0)`` (``-A (u + u0)`` when ``c = 0``).

``U^m G`` is produced both by iterating ``U`` and by the binomial closed form
``P_m G + D_m X_L G`` with ``lambda = -2m(cL + L0)``::

    P_m = sum_{k=0}^{floor(m/2)}     C(m, 2k)   gamma^(2k)   p_u^(m-2k)   lambda^k
    D_m = sum_{k=0}^{floor((m-1)/2)} C(m, 2k+1) gamma^(2k+1) p_u^(m-2k-1) lambda^k
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .expr import core
from .expr import normal as nf
from .expr import numbers as nb
from .expr.compile import compile_exprs
from .expr.core import Expr, Sym
from .geometry import Chart
from .phasepoly import MomentumPolynomial, PhaseSpace, natural_hamiltonian, x_apply


class ExtensionError(ValueError):
    """Invalid extension request."""


class UnsupportedChart(ExtensionError):
    """No tabulated complete solution of the Hessian equation."""


U = Sym("u", "coordinate")


def _e(x) -> Expr:
    return core.as_expr(x)


# ------------------------------------------------------------------ spec


@dataclass(frozen=True)
class ExtensionSpec:
    """Extension parameters; ``c = 0`` selects the flat branch.

    All parameters accept numbers or expressions (for instance ``c = chi/m``
    on a chart with symbolic curvature).
    """

    m: int
    c: Expr = core.ZERO
    kappa: Expr = core.ZERO
    u0: Expr = core.ZERO
    L0: Expr = core.ZERO
    V0: Expr = core.ZERO
    W0: Expr = core.ZERO
    A: Expr | None = None

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ExtensionError("m must be a positive integer")
        object.__setattr__(self, "m", int(self.m))
        for name in ("c", "kappa", "u0", "L0", "V0", "W0"):
            object.__setattr__(self, name, _e(getattr(self, name)))
        if self.flat:
            A = _e(Fraction(1, self.m)) if self.A is None else _e(self.A)
            if nf.is_zero(A):
                raise ExtensionError("the flat branch requires A != 0")
            object.__setattr__(self, "A", A)
        elif self.A is not None:
            object.__setattr__(self, "A", _e(self.A))

    @property
    def flat(self) -> bool:
        return nf.is_zero(self.c)

    @property
    def branch(self) -> str:
        return "flat" if self.flat else "curved"

    @property
    def trivial(self) -> bool:
        """Flat branch with ``L0 = 0``: the extension decouples."""
        return self.flat and nf.is_zero(self.L0)

    @classmethod
    def default(cls, m: int, c=0, L0=0, kappa=None, **kw) -> "ExtensionSpec":
        """Normalised choices ``u0 = V0 = W0 = 0``; ``A = 1/m`` (flat) or ``kappa = m^2``."""
        c = _e(c)
        if not nf.is_zero(c) and kappa is None:
            kappa = m * m
        return cls(m=m, c=c, kappa=_e(kappa if kappa is not None else 0), L0=_e(L0), **kw)

    def substitute(self, mapping: Mapping) -> "ExtensionSpec":
        vals = {n: core.substitute(getattr(self, n), mapping) for n in ("c", "kappa", "u0", "L0", "V0", "W0")}
        A = core.substitute(self.A, mapping) if self.A is not None else None
        return ExtensionSpec(m=self.m, A=A, **vals)

    def to_json(self) -> dict:
        out = {"m": self.m, "branch": self.branch}
        for n in ("c", "kappa", "u0", "L0", "V0", "W0"):
            out[n] = nf.simplify(getattr(self, n)).key
        out["A"] = nf.simplify(self.A).key if self.A is not None else None
        return out


def gamma_expr(spec: ExtensionSpec, u: Sym = U) -> Expr:
    """``gamma(u)``: ``C_kappa/S_kappa (c u + u0)``, or ``-A (u + u0)`` when ``c = 0``."""
    if spec.flat:
        return nf.simplify(core.mul(-1, spec.A, core.add(u, spec.u0)))
    arg = core.add(core.mul(spec.c, u), spec.u0)
    return nf.simplify(core.mul(core.c_kappa(spec.kappa, arg), core.power(core.s_kappa(spec.kappa, arg), -1)))


# ---------------------------------------------------------------- G ansatz


@dataclass
class GAnsatz:
    """``G = sum_k b_k phi_k`` with the tabulated complete solution of a chart."""

    chart: Chart
    basis: tuple
    coeffs: tuple

    @property
    def size(self) -> int:
        return len(self.basis)

    def G(self, vector: Sequence) -> Expr:
        terms = []
        for a, phi in zip(vector, self.basis):
            a = _as_exact(a)
            if not nf.is_zero(a):
                terms.append(core.mul(a, phi))
        return nf.simplify(core.add(*terms))

    def G_symbolic(self) -> Expr:
        return core.add(*(core.mul(b, phi) for b, phi in zip(self.coeffs, self.basis)))

    def vector_of(self, G: Expr) -> np.ndarray:
        """Coefficients of ``G`` in the basis, when ``G`` is linear in the ``b_k``."""
        vec = []
        for b in self.coeffs:
            d = nf.simplify(core.diff(G, b))
            if d.free_symbols:
                raise ExtensionError("G is not a constant combination of the basis")
            vec.append(core.evaluate(d, {}))
        return np.array(vec)


def _snap(x: float) -> Fraction:
    f = Fraction(x).limit_denominator(10**6)
    return f if abs(float(f) - x) < 1e-12 else Fraction(x)


def _as_exact(a) -> Expr:
    """Exact constant for a numeric coefficient (snapping near-rationals)."""
    if isinstance(a, Expr):
        return a
    z = complex(a)
    return core.Num(nb.make(_snap(z.real), _snap(z.imag)))


def g_basis(chart: Chart, m: int = 1) -> GAnsatz:
    """Tabulated complete solution of the Hessian equation for ``chart``."""
    fam = chart.family
    tab = chart.symbol_table()
    if fam == "euclid":
        basis = (core.ONE,) + tuple(chart.coords)
    elif fam == "sphere":
        th, ph = chart.coords
        basis = (core.cos(th), core.mul(core.sin(ph), core.sin(th)), core.mul(core.cos(ph), core.sin(th)))
    elif fam == "ttw":
        x1, x2 = chart.coords
        chi, zeta = tab["chi"], tab["zeta"]
        s1 = core.s_kappa(chi, x1)
        basis = (core.c_kappa(chi, x1), core.mul(core.s_kappa(zeta, x2), s1), core.mul(core.c_kappa(zeta, x2), s1))
    else:
        raise UnsupportedChart(f"no built-in complete solution for chart {chart.id!r}")
    coeffs = tuple(Sym(f"b{k}", "parameter") for k in range(len(basis)))
    return GAnsatz(chart, basis, coeffs)


# --------------------------------------------------------- compatibility


def compatibility_parts(V: Expr, ansatz: GAnsatz, m: int, c, L0) -> tuple:
    """Per basis function: (``grad V . grad phi``, ``2m(cV + L0) phi``)."""
    chart = ansatz.chart
    names = chart.coord_names
    gi = chart.metric_inv
    dV = [core.diff(V, x) for x in names]
    pot = core.mul(2 * m, core.add(core.mul(_e(c), V), _e(L0)))
    first, second = [], []
    for phi in ansatz.basis:
        dphi = [core.diff(phi, x) for x in names]
        t = []
        for i in range(chart.n):
            for j in range(chart.n):
                if not nf.is_zero(gi[i][j]):
                    t.append(core.mul(gi[i][j], dV[i], dphi[j]))
        first.append(core.add(*t))
        second.append(core.mul(pot, phi))
    return first, second


def compatibility_residual(V: Expr, ansatz: GAnsatz, m: int, c, L0, G: Expr | None = None) -> Expr:
    """``grad V . grad G - 2m(cV + L0) G`` (symbolic ``G`` by default)."""
    G = ansatz.G_symbolic() if G is None else G
    chart = ansatz.chart
    names = chart.coord_names
    gi = chart.metric_inv
    t = []
    for i in range(chart.n):
        for j in range(chart.n):
            if not nf.is_zero(gi[i][j]):
                t.append(core.mul(gi[i][j], core.diff(V, names[i]), core.diff(G, names[j])))
    t.append(core.mul(-2 * m, core.add(core.mul(_e(c), V), _e(L0)), G))
    return core.add(*t)


@dataclass
class Nullspace:
    """Numerical nullspace of the sampled compatibility matrix."""

    basis: np.ndarray  # (dim, n) orthonormal rows
    singular_values: np.ndarray
    samples: int
    seed: int

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    def rational_basis(self, max_den: int = 1000) -> list:
        """Reduced row-echelon form with entries rationalised where exact."""
        if self.dim == 0:
            return []
        M = rref(self.basis)
        out = []
        for row in M:
            vals = []
            for z in row:
                vals.append(_rationalize(z, max_den))
            out.append(vals)
        return out


def _rationalize(z: complex, max_den: int):
    def r(x):
        f = Fraction(x).limit_denominator(max_den)
        return f if abs(float(f) - x) < 1e-8 else x

    if abs(z.imag) < 1e-10:
        return r(z.real)
    return complex(z)


def rref(A: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Reduced row-echelon form with partial pivoting."""
    M = np.array(A, dtype=np.complex128)
    rows, cols = M.shape
    r = 0
    for col in range(cols):
        if r >= rows:
            break
        piv = r + int(np.argmax(np.abs(M[r:, col])))
        if abs(M[piv, col]) < tol:
            continue
        M[[r, piv]] = M[[piv, r]]
        M[r] = M[r] / M[r, col]
        for k in range(rows):
            if k != r:
                M[k] = M[k] - M[k, col] * M[r]
        r += 1
    M[np.abs(M) < tol] = 0
    return M[:r]


def _inputs_for(chart: Chart, exprs: Sequence[Expr], params: Mapping) -> list:
    free = set()
    for e in exprs:
        free |= e.free_symbols
    names = list(chart.coord_names)
    missing = sorted(free - set(names) - set(params))
    if missing:
        raise ExtensionError(f"unbound parameters {missing}")
    return names + sorted(free & set(params))


def _sample_matrix(V: Expr, ansatz: GAnsatz, m: int, c, L0, params: Mapping, samples: int, seed: int,
                   complex_mode: bool, extra_singular: Sequence = ()):
    chart = ansatz.chart
    first, second = compatibility_parts(V, ansatz, m, c, L0)
    exprs = list(first) + list(second)
    inputs = _inputs_for(chart, exprs, params)
    prog = compile_exprs(exprs, inputs)
    sampler = chart.sampler(seed=seed, complex_mode=complex_mode, extra_singular=extra_singular)
    pvals = np.array([complex(params[n]) for n in inputs[chart.n:]], dtype=np.complex128)
    rows, scales = [], []
    tries = 0
    while len(rows) < samples and tries < 20:
        tries += 1
        X = sampler.draw(samples - len(rows))
        X = np.concatenate([X, np.tile(pvals, (len(X), 1))], axis=1)
        vals = kernels.evaluate_program(prog, X)
        good = np.all(np.isfinite(vals), axis=1)
        vals = vals[good]
        k = ansatz.size
        R = vals[:, :k] - vals[:, k:]
        S = np.abs(vals[:, :k]) + np.abs(vals[:, k:])
        rows.extend(R)
        scales.extend(S)
    if len(rows) < samples:
        from .sampling import SamplerExhausted

        raise SamplerExhausted("potential has poles at the drawn samples")
    return np.array(rows[:samples]), np.array(scales[:samples])


def compatibility_nullspace(V: Expr, ansatz: GAnsatz, m: int, c, L0, samples: int | None = None,
                            params: Mapping | None = None, seed: int = 0, complex_mode: bool = False,
                            rel_tol: float = 1e-9, extra_singular: Sequence = ()) -> Nullspace:
    """Orthonormal basis of coefficient vectors solving the compatibility equation.

    Each sampled row is scaled by the magnitude of its terms, so the test is
    insensitive to the overall size of the potential.
    """
    params = dict(params or {})
    n = ansatz.size
    samples = samples or max(3 * n, 24)
    if samples < 3 * n:
        raise ExtensionError("need at least 3 samples per basis function")
    R, S = _sample_matrix(V, ansatz, m, c, L0, params, samples, seed, complex_mode, extra_singular)
    scale = S.sum(axis=1)
    keep = scale > 0
    A = R[keep] / scale[keep, None]
    if A.shape[0] == 0:
        return Nullspace(np.eye(n, dtype=np.complex128), np.zeros(0), samples, seed)
    _, s, Vh = np.linalg.svd(A)
    rank = int(np.sum(s > rel_tol * s[0])) if s.size and s[0] > 0 else 0
    null = Vh[rank:].conj()
    return Nullspace(null, s, samples, seed)


def compatibility_check(V: Expr, ansatz: GAnsatz, m: int, c, L0, vector: Sequence, params: Mapping | None = None,
                        samples: int = 200, seed: int = 12345, complex_mode: bool = False,
                        extra_singular: Sequence = ()) -> float:
    """Max relative compatibility residual of one coefficient vector at fresh points."""
    R, S = _sample_matrix(V, ansatz, m, c, L0, dict(params or {}), samples, seed, complex_mode, extra_singular)
    a = np.asarray(vector, dtype=np.complex128)
    num = np.abs(R @ a)
    den = S @ np.abs(a)
    den = np.where(den > 0, den, 1.0)
    return float(np.max(num / den))


# --------------------------------------------------------------- extension


@dataclass
class ExtendedSystem:
    """Extended Hamiltonian with its first integrals."""

    L: MomentumPolynomial
    spec: ExtensionSpec
    G: Expr
    H: MomentumPolynomial
    u: Sym
    integrals: list = field(default_factory=list)  # (name, MomentumPolynomial)
    inherited: list = field(default_factory=list)  # names of inherited integrals
    metadata: dict = field(default_factory=dict)

    @property
    def space(self) -> PhaseSpace:
        return self.H.space

    @property
    def trivial(self) -> bool:
        return self.spec.trivial

    @property
    def L_ext(self) -> MomentumPolynomial:
        return self.L.lift(self.space)

    def integral(self, name: str) -> MomentumPolynomial:
        for n, P in self.integrals:
            if n == name:
                return P
        raise KeyError(name)

    def to_json(self) -> dict:
        return {
            "H": self.H.to_json(),
            "integrals": {n: P.to_json() for n, P in self.integrals},
            "metadata": {
                "spec": self.spec.to_json(),
                "G": nf.simplify(self.G).key,
                "base_chart": self.L.space.id,
                "chart": self.space.id,
                "trivial": self.trivial,
                **self.metadata,
            },
        }


def extended_space(space: PhaseSpace, u: Sym = U, append: bool = False) -> PhaseSpace:
    coords = space.coords + (u,) if append else (u,) + space.coords
    return PhaseSpace(f"{space.id}+{u.name}", coords)


def extended_hamiltonian(L: MomentumPolynomial, spec: ExtensionSpec, u: Sym = U,
                         space: PhaseSpace | None = None) -> MomentumPolynomial:
    space = space or extended_space(L.space, u)
    Lx = L.lift(space)
    kin = MomentumPolynomial.momentum(space, u.name, 2) * Fraction(1, 2)
    if spec.flat:
        mA = core.mul(spec.m, spec.A)
        harm = core.mul(spec.m, spec.L0, core.power(spec.A, 2), core.power(core.add(u, spec.u0), 2))
        return kin + Lx * mA + MomentumPolynomial.constant(space, core.add(core.mul(mA, spec.V0), harm))
    arg = core.add(core.mul(spec.c, u), spec.u0)
    inv_s2 = core.power(core.s_kappa(spec.kappa, arg), -2)
    return kin + Lx * core.mul(spec.m, spec.c, inv_s2) + MomentumPolynomial.constant(
        space, core.add(core.mul(spec.m, spec.L0, inv_s2), spec.W0))


def u_apply(spec: ExtensionSpec, L: MomentumPolynomial, F: MomentumPolynomial, u: Sym = U,
            gamma: Expr | None = None) -> MomentumPolynomial:
    """``U F = p_u F + gamma(u) {L, F}``."""
    space = F.space
    if u.name not in space.coord_names:
        raise ExtensionError(f"{u.name} is not a coordinate of {space.id}")
    Lx = L if L.space == space else L.lift(space)
    g = gamma_expr(spec, u) if gamma is None else gamma
    return MomentumPolynomial.momentum(space, u.name) * F + x_apply(Lx, F) * g


def first_integral_iterative(spec: ExtensionSpec, L: MomentumPolynomial, G: Expr, m: int | None = None,
                             u: Sym = U, space: PhaseSpace | None = None, prune: bool = False) -> MomentumPolynomial:
    """``U^m G`` by repeated application of ``U``."""
    m = spec.m if m is None else m
    space = space or extended_space(L.space, u)
    Lx = L.lift(space)
    g = gamma_expr(spec, u)
    F = MomentumPolynomial.constant(space, G)
    for _ in range(m):
        F = u_apply(spec, Lx, F, u, gamma=g)
        if prune:
            F = F.prune()
    return F


def lambda_poly(spec: ExtensionSpec, L: MomentumPolynomial) -> MomentumPolynomial:
    """``lambda = -2m(cL + L0)`` with ``X_L^2 G = lambda G``."""
    return (L * spec.c + spec.L0) * (-2 * spec.m)


def first_integral_closed(spec: ExtensionSpec, L: MomentumPolynomial, G: Expr, m: int | None = None,
                          u: Sym = U, space: PhaseSpace | None = None) -> MomentumPolynomial:
    """``U^m G = P_m G + D_m X_L G`` from the binomial closed form."""
    m = spec.m if m is None else m
    space = space or extended_space(L.space, u)
    Lx = L.lift(space)
    g = gamma_expr(spec, u)
    lam = lambda_poly(spec, Lx)
    pu = MomentumPolynomial.momentum(space, u.name)
    Gp = MomentumPolynomial.constant(space, G)
    XG = x_apply(Lx, Gp)
    lam_pows = [MomentumPolynomial.constant(space, 1)]
    for _ in range(m // 2):
        lam_pows.append(lam_pows[-1] * lam)
    P = MomentumPolynomial.zero(space)
    for k in range(m // 2 + 1):
        P = P + (pu ** (m - 2 * k)) * lam_pows[k] * core.mul(comb(m, 2 * k), core.power(g, 2 * k))
    D = MomentumPolynomial.zero(space)
    for k in range((m - 1) // 2 + 1):
        D = D + (pu ** (m - 2 * k - 1)) * lam_pows[k] * core.mul(comb(m, 2 * k + 1), core.power(g, 2 * k + 1))
    return P * Gp + D * XG


def extend(L: MomentumPolynomial, spec: ExtensionSpec, G: Expr | None = None,
           inherited: Sequence = (), u: Sym = U, closed_form: bool = True,
           append: bool = False, metadata: Mapping | None = None) -> ExtendedSystem:
    """Build the extended Hamiltonian and its integrals ``H, L, inherited, U^m G``."""
    space = extended_space(L.space, u, append=append)
    H = extended_hamiltonian(L, spec, u, space)
    ext = ExtendedSystem(L=L, spec=spec, G=G if G is not None else core.ZERO, H=H, u=u,
                         metadata=dict(metadata or {}))
    ext.integrals.append(("H", H))
    ext.integrals.append(("L", L.lift(space)))
    for name, I in inherited:
        ext.integrals.append((name, I.lift(space)))
        ext.inherited.append(name)
    if G is not None:
        make = first_integral_closed if closed_form else first_integral_iterative
        ext.integrals.append((f"U^{spec.m}G", make(spec, L, G, u=u, space=space)))
    return ext


# ------------------------------------------------------------------ chains


@dataclass
class ChainStep:
    """One extension in an oscillator chain."""

    m: int
    omega_new: Expr
    system: ExtendedSystem


def oscillator(n: int = 1, omega=None) -> MomentumPolynomial:
    """``1/2 p_1^2 + omega x_1^2`` on E^1 (coordinate ``x1``)."""
    x1 = Sym("x1", "coordinate")
    w = Sym("omega", "parameter") if omega is None else _e(omega)
    space = PhaseSpace("E1", (x1,))
    return natural_hamiltonian(space, ((core.ONE,),), core.mul(w, core.power(x1, 2)))


def iterate_extend(chain: Sequence[int], omega=None) -> list:
    """Iterated extension of the one-dimensional oscillator.

    Step ``k`` extends ``H_k`` with ``G = x_k``, ``A = 1/m_k`` and
    ``L0 = omega_k/m_k``, adding the coordinate ``x_{k+1}`` with frequency
    parameter ``omega_{k+1} = omega_k / m_k^2``.
    """
    if not chain:
        raise ExtensionError("chain must contain at least one multiplicity")
    if any(int(m) != m or m < 1 for m in chain):
        raise ExtensionError("chain entries must be positive integers")
    w = Sym("omega", "parameter") if omega is None else _e(omega)
    L = oscillator(omega=w)
    omega_k = w
    steps = []
    carried = [("H1", L)]
    for k, m in enumerate(chain, start=1):
        xk = Sym(f"x{k}", "coordinate")
        new = Sym(f"x{k + 1}", "coordinate")
        spec = ExtensionSpec(m=m, c=0, A=Fraction(1, m), L0=nf.simplify(core.mul(omega_k, Fraction(1, m))))
        ext = extend(L, spec, G=xk, inherited=[(n, I) for n, I in carried if n != f"H{k}"], u=new, append=True,
                     metadata={"chain": list(chain), "step": k})
        # rename so the current Hamiltonian is H_{k+1} and the base is H_k
        ext.integrals = [(f"H{k + 1}" if n == "H" else (f"H{k}" if n == "L" else n), I) for n, I in ext.integrals]
        ext.integrals = [(f"U{k}" if n == f"U^{m}G" else n, I) for n, I in ext.integrals]
        omega_k = nf.simplify(core.mul(omega_k, Fraction(1, m * m)))
        steps.append(ChainStep(m=m, omega_new=omega_k, system=ext))
        carried = list(ext.integrals)
        L = ext.H
    return steps
