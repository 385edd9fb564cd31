"""Polynomials in the momenta with symbolic coefficients.

A :class:`MomentumPolynomial` lives on a :class:`PhaseSpace` (an ordered list
of configuration coordinates, each with its conjugate momentum ``p_<name>``)
and stores ``{multi-index: coefficient}``.  Coefficients depend only on
coordinates and parameters; they are kept in canonical normal form.

The Poisson bracket convention is

.. math:: \\{F, G\\} = \\sum_i \\partial_{p_i} F\\, \\partial_{q^i} G
          - \\partial_{q^i} F\\, \\partial_{p_i} G,

so that ``{L, G} = g^{ij} p_j \\partial_i G`` for a natural Hamiltonian ``L``
and ``dF/dt = {H, F}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .expr import core
from .expr import normal as nf
from .expr import numbers as nb
from .expr.compile import compile_exprs
from .expr.core import Expr, Sym


class ChartMismatch(ValueError):
    """Operands live on different phase spaces."""


class MomentumError(ValueError):
    """An expression is not polynomial in the momenta."""


def momentum_name(coord: str) -> str:
    return f"p_{coord}"


@dataclass(frozen=True)
class PhaseSpace:
    """Ordered configuration coordinates and their conjugate momenta."""

    id: str
    coords: tuple

    def __post_init__(self):
        names = [c.name for c in self.coords]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate coordinate names in {self.id}")

    @property
    def n(self) -> int:
        return len(self.coords)

    @property
    def coord_names(self) -> tuple:
        return tuple(c.name for c in self.coords)

    @property
    def momenta(self) -> tuple:
        return tuple(Sym(momentum_name(c.name), "momentum") for c in self.coords)

    @property
    def momentum_names(self) -> tuple:
        return tuple(momentum_name(c.name) for c in self.coords)

    @property
    def phase_names(self) -> tuple:
        return self.coord_names + self.momentum_names

    def extended(self, new: Sym, id: str | None = None) -> "PhaseSpace":
        """Phase space with ``new`` prepended to the coordinates."""
        return PhaseSpace(id or f"{self.id}+{new.name}", (new,) + self.coords)

    def symbol_table(self) -> dict:
        out = {c.name: c for c in self.coords}
        out.update({p.name: p for p in self.momenta})
        return out


def _simp(e: Expr) -> Expr:
    return nf.simplify(e)


def _is_zero(e: Expr) -> bool:
    return isinstance(e, core.Num) and nb.is_zero(e.value)


class MomentumPolynomial:
    """Immutable polynomial in the momenta of ``space``."""

    __slots__ = ("space", "terms", "_programs")

    def __init__(self, space: PhaseSpace, terms: Mapping | None = None, simplify: bool = True):
        self.space = space
        clean = {}
        for idx, c in (terms or {}).items():
            idx = tuple(int(k) for k in idx)
            if len(idx) != space.n or any(k < 0 for k in idx):
                raise ValueError(f"bad multi-index {idx} for {space.id}")
            c = _simp(core.as_expr(c)) if simplify else core.as_expr(c)
            if not _is_zero(c):
                clean[idx] = c
        self.terms = clean
        self._programs = {}

    # ---------------------------------------------------------- construction

    @classmethod
    def zero(cls, space: PhaseSpace) -> "MomentumPolynomial":
        return cls(space, {})

    @classmethod
    def constant(cls, space: PhaseSpace, c) -> "MomentumPolynomial":
        return cls(space, {(0,) * space.n: c})

    @classmethod
    def momentum(cls, space: PhaseSpace, coord: str, power: int = 1) -> "MomentumPolynomial":
        idx = [0] * space.n
        idx[space.coord_names.index(coord)] = power
        return cls(space, {tuple(idx): core.ONE})

    @classmethod
    def from_expr(cls, e: Expr, space: PhaseSpace) -> "MomentumPolynomial":
        """Split an expression that is polynomial in the momenta of ``space``."""
        pnames = space.momentum_names
        pos = {n: i for i, n in enumerate(pnames)}
        poly = nf.normalize(e)
        grouped: dict = {}
        for mono, c in poly.items():
            idx = [0] * space.n
            rest = []
            for atom, ex in mono:
                if isinstance(atom, Sym) and atom.name in pos:
                    if ex.denominator != 1 or ex < 0:
                        raise MomentumError(f"non-polynomial momentum power in {e}")
                    idx[pos[atom.name]] = int(ex)
                else:
                    if atom.free_symbols & set(pnames):
                        raise MomentumError(f"momentum inside a non-polynomial factor of {e}")
                    rest.append((atom, ex))
            grouped.setdefault(tuple(idx), {})[tuple(rest)] = c
        return cls(space, {idx: nf.from_poly(p) for idx, p in grouped.items()}, simplify=False)

    # ------------------------------------------------------------- algebra

    def _check(self, other: "MomentumPolynomial"):
        if self.space != other.space:
            raise ChartMismatch(f"{self.space.id} vs {other.space.id}")

    def _coerce(self, other) -> "MomentumPolynomial":
        if isinstance(other, MomentumPolynomial):
            self._check(other)
            return other
        return MomentumPolynomial.constant(self.space, core.as_expr(other))

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self.terms)
        for k, c in other.terms.items():
            out[k] = core.add(out[k], c) if k in out else c
        return MomentumPolynomial(self.space, out)

    __radd__ = __add__

    def __neg__(self):
        return MomentumPolynomial(self.space, {k: core.mul(-1, c) for k, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, MomentumPolynomial):
            c = core.as_expr(other)
            return MomentumPolynomial(self.space, {k: core.mul(c, v) for k, v in self.terms.items()})
        self._check(other)
        acc: dict = {}
        for k1, c1 in self.terms.items():
            for k2, c2 in other.terms.items():
                k = tuple(a + b for a, b in zip(k1, k2))
                acc.setdefault(k, []).append(core.mul(c1, c2))
        return MomentumPolynomial(self.space, {k: core.add(*v) for k, v in acc.items()})

    __rmul__ = __mul__

    def __pow__(self, n: int):
        if n < 0:
            raise ValueError("negative power of a momentum polynomial")
        out = MomentumPolynomial.constant(self.space, 1)
        for _ in range(n):
            out = out * self
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, MomentumPolynomial):
            return NotImplemented
        return self.space == other.space and self.terms == other.terms

    def __hash__(self):
        return hash((self.space.id, tuple(sorted((k, c.key) for k, c in self.terms.items()))))

    def __repr__(self) -> str:
        return f"MomentumPolynomial({self.space.id}: {self})"

    def __str__(self) -> str:
        return str(self.to_expr())

    # ----------------------------------------------------------- structure

    @property
    def degree(self) -> int:
        return max((sum(k) for k in self.terms), default=0)

    def is_zero(self) -> bool:
        return not self.terms

    def coefficient(self, idx: Sequence[int]) -> Expr:
        return self.terms.get(tuple(idx), core.ZERO)

    def coefficient_of(self, **powers: int) -> Expr:
        """Coefficient by momentum name, e.g. ``coefficient_of(p_u=4)``."""
        idx = [0] * self.space.n
        for name, k in powers.items():
            idx[self.space.momentum_names.index(name)] = k
        return self.coefficient(idx)

    def to_expr(self) -> Expr:
        ps = self.space.momenta
        terms = []
        for idx in sorted(self.terms, reverse=True):
            factors = [self.terms[idx]] + [core.power(p, k) for p, k in zip(ps, idx) if k]
            terms.append(core.mul(*factors))
        return core.add(*terms) if terms else core.ZERO

    def free_parameters(self) -> set:
        out = set()
        for c in self.terms.values():
            out |= c.free_symbols
        return out - set(self.space.coord_names)

    def substitute(self, mapping: Mapping) -> "MomentumPolynomial":
        return MomentumPolynomial(self.space, {k: core.substitute(c, mapping) for k, c in self.terms.items()})

    def lift(self, space: PhaseSpace) -> "MomentumPolynomial":
        """Re-express on a larger phase space containing all our coordinates."""
        pos = [space.coord_names.index(n) for n in self.space.coord_names]
        out = {}
        for idx, c in self.terms.items():
            big = [0] * space.n
            for i, k in zip(pos, idx):
                big[i] = k
            out[tuple(big)] = c
        return MomentumPolynomial(space, out, simplify=False)

    def prune(self, trials: int = 20, domain: Mapping | None = None) -> "MomentumPolynomial":
        """Drop coefficients that vanish at random complex points.

        Used to remove zero coefficients the normal form cannot recognise
        (for instance identities that hold only on a constraint manifold).
        """
        keep = {k: c for k, c in self.terms.items()
                if not nf.equivalent(c, core.ZERO, trials=trials, domain=domain)}
        return MomentumPolynomial(self.space, keep, simplify=False)

    # ------------------------------------------------------------ calculus

    def d_momentum(self, i: int) -> "MomentumPolynomial":
        out = {}
        for idx, c in self.terms.items():
            if idx[i]:
                j = list(idx)
                j[i] -= 1
                out[tuple(j)] = core.mul(idx[i], c)
        return MomentumPolynomial(self.space, out, simplify=False)

    def d_coord(self, i: int) -> "MomentumPolynomial":
        name = self.space.coord_names[i]
        return MomentumPolynomial(self.space, {k: core.diff(c, name) for k, c in self.terms.items()})

    def gradient_exprs(self) -> list:
        """Raw expressions for (dF/dq^1..dF/dq^n, dF/dp_1..dF/dp_n)."""
        n = self.space.n
        return [self.d_coord(i).to_expr() for i in range(n)] + [self.d_momentum(i).to_expr() for i in range(n)]

    # ---------------------------------------------------------- evaluation

    def program(self, inputs: Sequence[str], what: str = "value"):
        """Compiled program for the value (or ``"gradient"``) over ``inputs``."""
        key = (what, tuple(inputs))
        prog = self._programs.get(key)
        if prog is None:
            exprs = [self.to_expr()] if what == "value" else self.gradient_exprs()
            prog = compile_exprs(exprs, inputs)
            self._programs[key] = prog
        return prog

    def evaluate_many(self, X: np.ndarray, inputs: Sequence[str]) -> np.ndarray:
        return kernels.evaluate_program(self.program(inputs), X)[:, 0]

    def to_json(self) -> dict:
        """Deterministic JSON form; ``powers`` index the momenta in order."""
        return {
            "chart": self.space.id,
            "vars": list(self.space.phase_names),
            "terms": [{"powers": list(k), "coeff": self.terms[k].key} for k in sorted(self.terms)],
        }

    @classmethod
    def from_json(cls, data: Mapping, space: PhaseSpace, symbols: Mapping) -> "MomentumPolynomial":
        from .expr.parse import parse_expr

        if data["chart"] != space.id:
            raise ChartMismatch(f"{data['chart']} vs {space.id}")
        return cls(space, {tuple(t["powers"]): parse_expr(t["coeff"], symbols) for t in data["terms"]},
                   simplify=False)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


# --------------------------------------------------------------- operations


def poisson(F: MomentumPolynomial, G: MomentumPolynomial) -> MomentumPolynomial:
    """``{F, G} = sum_i dF/dp_i dG/dq^i - dF/dq^i dG/dp_i``."""
    if F.space != G.space:
        raise ChartMismatch(f"{F.space.id} vs {G.space.id}")
    out = MomentumPolynomial.zero(F.space)
    for i in range(F.space.n):
        dpF = F.d_momentum(i)
        dqG = G.d_coord(i) if dpF.terms else None
        if dqG is not None and dqG.terms:
            out = out + dpF * dqG
        dpG = G.d_momentum(i)
        if dpG.terms:
            dqF = F.d_coord(i)
            if dqF.terms:
                out = out - dqF * dpG
    return out


def x_apply(L: MomentumPolynomial, F: MomentumPolynomial) -> MomentumPolynomial:
    """Hamiltonian vector field of ``L`` applied to ``F``: ``{L, F}``."""
    return poisson(L, F)


def _binding(pt: Mapping) -> dict:
    return {(k.name if isinstance(k, Sym) else k): complex(v) for k, v in pt.items()}


def eval_poly(F: MomentumPolynomial, pt: Mapping) -> complex:
    """Value of ``F`` at a phase point (names or Syms mapped to numbers)."""
    b = _binding(pt)
    missing = set(F.space.phase_names) - b.keys()
    if missing:
        raise core.EvaluationError(f"phase point misses {sorted(missing)}")
    return core.evaluate(F.to_expr(), b)


def phase_gradient(F: MomentumPolynomial, pt: Mapping) -> np.ndarray:
    """(dF/dq, dF/dp) at ``pt`` by exact differentiation."""
    b = _binding(pt)
    return np.array([core.evaluate(g, b) for g in F.gradient_exprs()], dtype=np.complex128)


def natural_hamiltonian(space: PhaseSpace, metric_inv: Sequence[Sequence[Expr]], V: Expr) -> MomentumPolynomial:
    """``1/2 g^{ij} p_i p_j + V``."""
    n = space.n
    terms: dict = {}
    for i in range(n):
        for j in range(n):
            g = core.as_expr(metric_inv[i][j])
            if isinstance(g, core.Num) and nb.is_zero(g.value):
                continue
            idx = [0] * n
            idx[i] += 1
            idx[j] += 1
            terms.setdefault(tuple(idx), []).append(core.mul(core.Num(Fraction(1, 2)), g))
    out = {k: core.add(*v) for k, v in terms.items()}
    zero = (0,) * n
    out[zero] = core.add(out.get(zero, core.ZERO), V)
    return MomentumPolynomial(space, out)


def stack_programs(polys: Iterable[MomentumPolynomial], inputs: Sequence[str], what: str = "value"):
    """One compiled program for several polynomials (values or gradients)."""
    exprs = []
    for P in polys:
        exprs.extend([P.to_expr()] if what == "value" else P.gradient_exprs())
    return compile_exprs(exprs, inputs)
