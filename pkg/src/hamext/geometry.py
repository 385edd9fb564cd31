"""Charts, Levi-Civita connection, curvature and the Hessian operator.

A :class:`Chart` stores the contravariant metric ``g^{ij}`` of a coordinate
patch.  Curvature is tested numerically: the Riemann tensor is computed
symbolically and compared at random points with the constant-curvature form
``R_{khij} = K (g_{ki} g_{hj} - g_{kj} g_{hi})`` (unit sphere: ``K = 1``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .expr import core
from .expr import normal as nf
from .expr.compile import compile_exprs
from .expr.core import Expr, Sym
from .phasepoly import PhaseSpace
from .sampling import Sampler, SamplerConfig


class SingularMetric(ValueError):
    """The metric is not invertible at generic points."""


class NonConstantCurvature(ValueError):
    """The chart does not have constant sectional curvature."""


@dataclass(eq=False)
class Chart:
    """Coordinate chart with contravariant metric ``metric_inv``.

    Parameters
    ----------
    id:
        Identifier used by the catalog and in JSON output.
    coords:
        Coordinate symbols, in order.
    metric_inv:
        Symmetric matrix ``g^{ij}`` of expressions.
    params:
        Names of chart parameters (for example the curvature of a family).
    helpers:
        Named expressions in the coordinates usable in potentials.
    box:
        Sampling ranges per coordinate.
    singular:
        Expressions vanishing on coordinate singularities.
    family:
        ``"euclid"``, ``"sphere"`` or ``"ttw"``; selects the tabulated
        complete solution of the Hessian equation.
    curvature:
        Declared sectional curvature (checked numerically by tests).
    """

    id: str
    coords: tuple
    metric_inv: tuple
    params: tuple = ()
    helpers: Mapping = field(default_factory=dict)
    box: Mapping = field(default_factory=dict)
    singular: tuple = ()
    family: str = "euclid"
    curvature: Expr | None = None
    param_box: Mapping = field(default_factory=dict)
    description: str = ""

    def __post_init__(self):
        n = len(self.coords)
        if n < 1:
            raise ValueError("a chart needs at least one coordinate")
        M = tuple(tuple(core.as_expr(x) for x in row) for row in self.metric_inv)
        if len(M) != n or any(len(r) != n for r in M):
            raise ValueError(f"metric of {self.id} must be {n}x{n}")
        for i in range(n):
            for j in range(i):
                if not nf.equivalent(M[i][j], M[j][i]):
                    raise ValueError(f"metric of {self.id} is not symmetric")
        self.metric_inv = M
        self._cache: dict = {}

    @property
    def n(self) -> int:
        return len(self.coords)

    @property
    def coord_names(self) -> tuple:
        return tuple(c.name for c in self.coords)

    @cached_property
    def space(self) -> PhaseSpace:
        return PhaseSpace(self.id, tuple(self.coords))

    def symbol_table(self) -> dict:
        table = {c.name: c for c in self.coords}
        table.update({p: Sym(p, "parameter") for p in self.params})
        return table

    def is_diagonal(self) -> bool:
        return all(nf.is_zero(self.metric_inv[i][j]) for i in range(self.n) for j in range(self.n) if i != j)

    def sampler(self, seed: int = 0, complex_mode: bool = False, extra_box: Mapping | None = None,
                names: Sequence[str] | None = None, extra_singular: Sequence = ()) -> Sampler:
        box = dict(self.param_box)
        box.update(self.box)
        box.update(extra_box or {})
        cfg = SamplerConfig(box=box, singular=tuple(self.singular) + tuple(extra_singular), seed=seed,
                            complex_mode=complex_mode)
        return Sampler(cfg, names if names is not None else self.coord_names)


# --------------------------------------------------------------- linear algebra


def _det(M) -> Expr:
    n = len(M)
    if n == 1:
        return M[0][0]
    if n == 2:
        return core.add(core.mul(M[0][0], M[1][1]), core.mul(-1, M[0][1], M[1][0]))
    terms = []
    for j in range(n):
        if nf.is_zero(M[0][j]):
            continue
        minor = [row[:j] + row[j + 1:] for row in M[1:]]
        terms.append(core.mul((-1) ** j, M[0][j], _det(minor)))
    return core.add(*terms)


def metric(chart: Chart) -> tuple:
    """Covariant metric ``g_{ij}`` (adjugate inverse of ``g^{ij}``)."""
    if "g" in chart._cache:
        return chart._cache["g"]
    n = chart.n
    Mi = chart.metric_inv
    if chart.is_diagonal():
        if any(nf.is_zero(Mi[i][i]) for i in range(n)):
            raise SingularMetric(chart.id)
        g = tuple(tuple(nf.simplify(core.power(Mi[i][i], -1)) if i == j else core.ZERO for j in range(n))
                  for i in range(n))
    else:
        det = nf.simplify(_det([list(r) for r in Mi]))
        if nf.is_zero(det):
            raise SingularMetric(chart.id)
        rows = []
        for i in range(n):
            row = []
            for j in range(n):
                minor = [list(r[:i] + r[i + 1:]) for k, r in enumerate(Mi) if k != j]
                cof = core.mul((-1) ** (i + j), _det(minor)) if n > 1 else core.ONE
                row.append(nf.simplify(core.mul(cof, core.power(det, -1))))
            rows.append(tuple(row))
        g = tuple(rows)
    chart._cache["g"] = g
    return g


def christoffel(chart: Chart) -> list:
    """``Gamma[k][i][j]`` of the Levi-Civita connection."""
    if "gamma" in chart._cache:
        return chart._cache["gamma"]
    n = chart.n
    g = metric(chart)
    gi = chart.metric_inv
    names = chart.coord_names
    dg = [[[core.diff(g[a][b], names[c]) for c in range(n)] for b in range(n)] for a in range(n)]
    G = []
    for k in range(n):
        rows = []
        for i in range(n):
            row = []
            for j in range(n):
                terms = []
                for l in range(n):
                    if nf.is_zero(gi[k][l]):
                        continue
                    s = core.add(dg[l][j][i], dg[l][i][j], core.mul(-1, dg[i][j][l]))
                    terms.append(core.mul(core.Num(Fraction(1, 2)), gi[k][l], s))
                row.append(nf.simplify(core.add(*terms)))
            rows.append(row)
        G.append(rows)
    chart._cache["gamma"] = G
    return G


def riemann_lowered(chart: Chart) -> dict:
    """Nonzero-candidate components ``R_{khij}`` (k<h, i<j) as expressions."""
    if "riem" in chart._cache:
        return chart._cache["riem"]
    n = chart.n
    G = christoffel(chart)
    g = metric(chart)
    names = chart.coord_names

    def R_up(k, h, i, j):
        terms = [core.diff(G[k][h][j], names[i]), core.mul(-1, core.diff(G[k][h][i], names[j]))]
        for p in range(n):
            terms.append(core.mul(G[k][i][p], G[p][h][j]))
            terms.append(core.mul(-1, G[k][j][p], G[p][h][i]))
        return core.add(*terms)

    out = {}
    for k in range(n):
        for h in range(k + 1, n):
            for i in range(n):
                for j in range(i + 1, n):
                    out[(k, h, i, j)] = core.add(*(core.mul(g[k][l], R_up(l, h, i, j)) for l in range(n)))
    chart._cache["riem"] = out
    return out


@dataclass
class CurvatureReport:
    """Outcome of the sampled constant-curvature test."""

    is_constant: bool
    K: complex | None
    residual: float
    samples: int


def _param_binding(chart: Chart, params: Mapping | None) -> dict:
    params = dict(params or {})
    missing = [p for p in chart.params if p not in params]
    if missing:
        raise ValueError(f"chart {chart.id} needs parameter values for {missing}")
    return {k: complex(v) for k, v in params.items()}


def curvature(chart: Chart, samples: int = 20, params: Mapping | None = None, seed: int = 0,
              tol: float = 1e-9) -> CurvatureReport:
    """Sampled test of constant sectional curvature.

    At each point the best-fit ``K`` of ``R_{khij} = K (g_{ki}g_{hj} - g_{kj}g_{hi})``
    is computed; the chart passes when the fit is exact and ``K`` is the same
    at every point (relative tolerance ``tol``).
    """
    if chart.n < 2:
        raise ValueError("curvature needs at least two coordinates")
    pb = _param_binding(chart, params)
    keys = sorted(riemann_lowered(chart))
    g = metric(chart)
    exprs = [riemann_lowered(chart)[k] for k in keys]
    exprs += [g[i][j] for i in range(chart.n) for j in range(chart.n)]
    inputs = list(chart.coord_names) + list(pb)
    prog = compile_exprs(exprs, inputs)
    X = chart.sampler(seed=seed).draw(samples)
    X = np.concatenate([X, np.tile(np.array(list(pb.values()), dtype=np.complex128), (samples, 1))], axis=1)
    vals = kernels.evaluate_program(prog, X)
    nR = len(keys)
    Ks = []
    resid = 0.0
    for row in vals:
        R = row[:nR]
        gm = row[nR:].reshape(chart.n, chart.n)
        T = np.array([gm[k, i] * gm[h, j] - gm[k, j] * gm[h, i] for (k, h, i, j) in keys])
        tt = np.vdot(T, T).real
        K = np.vdot(T, R) / tt
        Ks.append(K)
        resid = max(resid, float(np.max(np.abs(R - K * T)) / max(np.max(np.abs(T)), 1e-300)))
    Ks = np.array(Ks)
    Kmean = complex(np.mean(Ks))
    spread = float(np.max(np.abs(Ks - Kmean)) / max(1.0, abs(Kmean)))
    resid = max(resid, spread)
    ok = resid < tol
    return CurvatureReport(is_constant=ok, K=_clean(Kmean) if ok else None, residual=resid, samples=samples)


def _clean(z: complex, eps: float = 1e-12) -> complex:
    re = 0.0 if abs(z.real) < eps else z.real
    im = 0.0 if abs(z.imag) < eps else z.imag
    return complex(re, im)


def hessian_residual(G: Expr, chart: Chart, m: int, c) -> list:
    """Matrix ``nabla_i nabla_j G + m c g_{ij} G`` of expressions."""
    n = chart.n
    names = chart.coord_names
    Gam = christoffel(chart)
    g = metric(chart)
    grad = [core.diff(G, x) for x in names]
    mc = core.mul(m, core.as_expr(c))
    out = []
    for i in range(n):
        row = []
        for j in range(n):
            terms = [core.diff(grad[j], names[i])]
            for k in range(n):
                terms.append(core.mul(-1, Gam[k][i][j], grad[k]))
            terms.append(core.mul(mc, g[i][j], G))
            row.append(core.add(*terms))
        out.append(row)
    return out


def admissible_c(chart: Chart, m: int, params: Mapping | None = None, samples: int = 20) -> list:
    """Values of ``c`` allowing nonconstant solutions: ``[0]`` if flat, else ``[K/m]``."""
    if m < 1:
        raise ValueError("m must be a positive integer")
    if chart.n < 2:
        return [0j]
    rep = curvature(chart, samples=samples, params=params)
    if not rep.is_constant:
        raise NonConstantCurvature(f"{chart.id}: residual {rep.residual:.3g}")
    if abs(rep.K) < 1e-10:
        return [0j]
    return [rep.K / m]


def hessian_solution_dimension(chart: Chart, functions: Sequence[Expr], mc, samples: int = 40,
                               params: Mapping | None = None, seed: int = 0,
                               exclude_constants: bool = False) -> int:
    """Dimension of ``{G in span(functions) : nabla nabla G + mc g G = 0}``.

    Both the Hessian system and the evaluation map are sampled; linear
    relations among the functions themselves (such as x^2+y^2+z^2 = 1 on the
    sphere) are subtracted so the count refers to distinct functions.  With
    ``exclude_constants`` the constant functions are dropped from the span.
    """
    pb = _param_binding(chart, params) if chart.params else {}
    if exclude_constants:
        functions = [f for f in functions if f.free_symbols & set(chart.coord_names)]
    if not functions:
        return 0
    n = chart.n
    comps = []
    for f in functions:
        H = hessian_residual(f, chart, 1, core.as_expr(mc))
        comps.extend(H[i][j] for i in range(n) for j in range(i, n))
    inputs = list(chart.coord_names) + list(pb)
    prog = compile_exprs(comps, inputs)
    vprog = compile_exprs(list(functions), inputs)
    X = chart.sampler(seed=seed).draw(samples)
    if pb:
        X = np.concatenate([X, np.tile(np.array(list(pb.values())), (samples, 1))], axis=1)
    vals = kernels.evaluate_program(prog, X)
    ncomp = n * (n + 1) // 2
    nf_ = len(functions)
    # rows: (point, component); columns: functions
    A = vals.reshape(samples, nf_, ncomp).transpose(0, 2, 1).reshape(samples * ncomp, nf_)
    F = kernels.evaluate_program(vprog, X)
    return _null_dim(A) - _null_dim(F)


def _null_dim(A: np.ndarray, rel: float = 1e-9) -> int:
    if A.size == 0:
        return A.shape[1]
    s = np.linalg.svd(A, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return A.shape[1]
    return A.shape[1] - int(np.sum(s > rel * s[0]))
