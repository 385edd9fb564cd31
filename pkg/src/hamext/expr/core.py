"""Immutable expression trees: construction, printing, calculus, evaluation.

Nodes are hash-consed by their printed form: two nodes compare equal iff
they print identically.  Constructors (:func:`add`, :func:`mul`,
:func:`power`, :func:`func`) only flatten and fold numeric constants; the
heavier canonical form lives in :mod:`hamext.expr.normal`.
"""

from __future__ import annotations

import cmath
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Mapping, Union

from . import numbers as nb
from .numbers import GaussQ

FUNCTIONS = ("sin", "cos", "sinh", "cosh", "exp", "Sk", "Ck")
ARITY = {"sin": 1, "cos": 1, "sinh": 1, "cosh": 1, "exp": 1, "Sk": 2, "Ck": 2}
SYMBOL_KINDS = ("coordinate", "momentum", "parameter", "helper", "constant")


class ExprError(ValueError):
    """Malformed expression construction."""


class EvaluationError(ArithmeticError):
    """Numeric evaluation failed (pole, unbound symbol, overflow)."""

    def __init__(self, message: str, subexpr: "Expr | None" = None):
        super().__init__(message if subexpr is None else f"{message} in {subexpr}")
        self.subexpr = subexpr


class Expr:
    __slots__ = ("_key", "_hash", "_poly", "_free")

    def __init__(self):
        self._key = None
        self._hash = None
        self._poly = None
        self._free = None

    @property
    def key(self) -> str:
        if self._key is None:
            self._key = _print(self)
        return self._key

    def __str__(self) -> str:
        return self.key

    def __repr__(self) -> str:
        return f"Expr({self.key!r})"

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(self.key)
        return self._hash

    def __eq__(self, other) -> bool:
        if self is other:
            return True
        if not isinstance(other, Expr):
            return NotImplemented
        return self.key == other.key

    def __ne__(self, other) -> bool:
        r = self.__eq__(other)
        return r if r is NotImplemented else not r

    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return add(self, mul(Num(-1), as_expr(other)))

    def __rsub__(self, other):
        return add(as_expr(other), mul(Num(-1), self))

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return mul(self, power(as_expr(other), -1))

    def __rtruediv__(self, other):
        return mul(as_expr(other), power(self, -1))

    def __neg__(self):
        return mul(Num(-1), self)

    def __pow__(self, exponent):
        return power(self, exponent)

    @property
    def free_symbols(self) -> frozenset:
        """Names of the free symbols (excluding named constants like pi)."""
        if self._free is None:
            self._free = _free(self)
        return self._free


class Num(Expr):
    __slots__ = ("value",)

    def __init__(self, value):
        super().__init__()
        self.value = nb.as_exact(value)


class Sym(Expr):
    __slots__ = ("name", "kind")

    def __init__(self, name: str, kind: str = "parameter"):
        super().__init__()
        if kind not in SYMBOL_KINDS:
            raise ExprError(f"unknown symbol kind {kind!r}")
        self.name = name
        self.kind = kind


class Add(Expr):
    __slots__ = ("terms",)

    def __init__(self, terms: tuple):
        super().__init__()
        self.terms = terms


class Mul(Expr):
    __slots__ = ("factors",)

    def __init__(self, factors: tuple):
        super().__init__()
        self.factors = factors


class Pow(Expr):
    __slots__ = ("base", "exp")

    def __init__(self, base: Expr, exp: Fraction):
        super().__init__()
        self.base = base
        self.exp = exp


class Func(Expr):
    __slots__ = ("name", "args")

    def __init__(self, name: str, args: tuple):
        super().__init__()
        if name not in ARITY:
            raise ExprError(f"unknown function {name!r}")
        if len(args) != ARITY[name]:
            raise ExprError(f"{name} takes {ARITY[name]} argument(s), got {len(args)}")
        self.name = name
        self.args = args


ExprLike = Union[Expr, int, float, complex, Fraction, GaussQ]

ZERO = Num(0)
ONE = Num(1)
I = Num(GaussQ(Fraction(0), Fraction(1)))
PI = Sym("pi", "constant")
_CONSTANTS = {"pi": cmath.pi}


def as_expr(x: ExprLike) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, str):
        raise TypeError("strings must be parsed with parse_expr, not coerced")
    return Num(x)


def symbols(names: str, kind: str = "parameter") -> tuple:
    return tuple(Sym(n, kind) for n in names.split())


# ---------------------------------------------------------------- constructors


def add(*args: ExprLike) -> Expr:
    flat: list = []
    const = Fraction(0)
    const_pos = None

    def visit(a):
        nonlocal const, const_pos
        if isinstance(a, Add):
            for t in a.terms:
                visit(t)
        elif isinstance(a, Num):
            if const_pos is None:
                const_pos = len(flat)
                flat.append(None)
            const = const + a.value
        else:
            flat.append(a)

    for a in args:
        visit(as_expr(a))
    if const_pos is not None:
        if nb.is_zero(const):
            del flat[const_pos]
        else:
            flat[const_pos] = Num(const)
    if not flat:
        return ZERO
    if len(flat) == 1:
        return flat[0]
    return Add(tuple(flat))


def mul(*args: ExprLike) -> Expr:
    flat: list = []
    coeff = Fraction(1)

    def visit(a):
        nonlocal coeff
        if isinstance(a, Mul):
            for f in a.factors:
                visit(f)
        elif isinstance(a, Num):
            coeff = coeff * a.value
        else:
            flat.append(a)

    for a in args:
        visit(as_expr(a))
    if nb.is_zero(coeff):
        return ZERO
    if not nb.is_one(coeff):
        flat.insert(0, Num(coeff))
    if not flat:
        return ONE
    if len(flat) == 1:
        return flat[0]
    return Mul(tuple(flat))


def _num_power(value, e: Fraction) -> Expr:
    if e.denominator == 1:
        try:
            return Num(nb.ipow(value, int(e)))
        except ZeroDivisionError:
            raise ExprError("division by zero constant") from None
    if nb.is_zero(value):
        if e < 0:
            raise ExprError("division by zero constant")
        return ZERO
    if nb.is_real(value):
        q = e.denominator
        p = e.numerator
        root = nb.exact_root(value, q) if value > 0 else None
        if root is not None:
            return Num(nb.ipow(root, p))
        if value < 0 and q == 2:
            root = nb.exact_root(-value, 2)
            if root is not None:
                # principal branch: (-a)^(p/2) = a^(p/2) * i^p
                return Num(nb.ipow(root, p) * nb.ipow(I.value, p % 4))
    return Pow(Num(value), e)


def power(base: ExprLike, exponent) -> Expr:
    base = as_expr(base)
    if isinstance(exponent, Num):
        exponent = exponent.value
    if isinstance(exponent, Expr) or isinstance(exponent, GaussQ):
        raise ExprError("only rational exponents are supported")
    e = nb.as_exact(exponent)
    if isinstance(e, GaussQ):
        raise ExprError("only rational exponents are supported")
    if e == 0:
        return ONE
    if e == 1:
        return base
    if isinstance(base, Num):
        return _num_power(base.value, e)
    if isinstance(base, Pow) and e.denominator == 1:
        return power(base.base, base.exp * e)
    return Pow(base, e)


def func(name: str, *args: ExprLike) -> Expr:
    if name == "sqrt":
        if len(args) != 1:
            raise ExprError("sqrt takes 1 argument")
        return power(args[0], Fraction(1, 2))
    return Func(name, tuple(as_expr(a) for a in args))


def sin(x):
    return func("sin", x)


def cos(x):
    return func("cos", x)


def sinh(x):
    return func("sinh", x)


def cosh(x):
    return func("cosh", x)


def exp(x):
    return func("exp", x)


def sqrt(x):
    return func("sqrt", x)


def sk_explicit(kappa, x: Expr) -> Expr | None:
    """Elementary form of S_kappa(x) for an exact numeric kappa, if one exists."""
    k = kappa.value if isinstance(kappa, Num) else kappa
    if isinstance(k, GaussQ):
        return None
    if k == 0:
        return x
    r = nb.exact_root(abs(k), 2)
    if r is None:
        return None
    fn = "sin" if k > 0 else "sinh"
    return mul(Num(1 / r), Func(fn, (mul(Num(r), x),)))


def ck_explicit(kappa, x: Expr) -> Expr | None:
    """Elementary form of C_kappa(x) for an exact numeric kappa, if one exists."""
    k = kappa.value if isinstance(kappa, Num) else kappa
    if isinstance(k, GaussQ):
        return None
    if k == 0:
        return ONE
    r = nb.exact_root(abs(k), 2)
    if r is None:
        return None
    fn = "cos" if k > 0 else "cosh"
    return Func(fn, (mul(Num(r), x),))


def s_kappa(kappa: ExprLike, x: ExprLike) -> Expr:
    """S_kappa(x): sin(sqrt(k) x)/sqrt(k), x, or sinh(sqrt(-k) x)/sqrt(-k)."""
    kappa, x = as_expr(kappa), as_expr(x)
    if isinstance(kappa, Num):
        explicit = sk_explicit(kappa, x)
        if explicit is not None:
            return explicit
    return Func("Sk", (kappa, x))


def c_kappa(kappa: ExprLike, x: ExprLike) -> Expr:
    """C_kappa(x), the x-derivative of S_kappa(x)."""
    kappa, x = as_expr(kappa), as_expr(x)
    if isinstance(kappa, Num):
        explicit = ck_explicit(kappa, x)
        if explicit is not None:
            return explicit
    return Func("Ck", (kappa, x))


# -------------------------------------------------------------------- printing

_PREC_ADD, _PREC_MUL, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4


def _prec(e: Expr) -> int:
    if isinstance(e, Add):
        return _PREC_ADD
    if isinstance(e, Mul):
        return _PREC_MUL
    if isinstance(e, Pow):
        return _PREC_MUL if e.exp < 0 else _PREC_POW
    if isinstance(e, Num):
        v = e.value
        if isinstance(v, GaussQ):
            return _PREC_ATOM  # printed parenthesised
        if v < 0:
            return _PREC_ADD
        if v.denominator != 1:
            return _PREC_MUL
        return _PREC_ATOM
    return _PREC_ATOM


def _wrap(e: Expr, min_prec: int) -> str:
    s = e.key
    return f"({s})" if _prec(e) < min_prec else s


def _neg_split(t: Expr):
    """(True, printed |t|) when t carries a negative real leading coefficient."""
    if isinstance(t, Num) and nb.is_real(t.value) and t.value < 0:
        return True, Num(-t.value).key
    if isinstance(t, Mul):
        c = t.factors[0]
        if isinstance(c, Num) and nb.is_real(c.value) and c.value < 0:
            rest = mul(Num(-c.value), *t.factors[1:])
            return True, rest.key
    return False, t.key


def _print_pow_body(base: Expr, e: Fraction) -> str:
    if e == Fraction(1, 2):
        return f"sqrt({base.key})"
    if e == 1:
        return _wrap(base, _PREC_MUL + 1) if isinstance(base, (Mul, Add)) else _wrap(base, _PREC_POW)
    b = _wrap(base, _PREC_ATOM)
    if e.denominator == 1 and e > 0:
        return f"{b}^{e.numerator}"
    return f"{b}^({e.numerator}/{e.denominator})" if e.denominator != 1 else f"{b}^({e.numerator})"


def _print(e: Expr) -> str:
    if isinstance(e, Num):
        return nb.format_exact(e.value)
    if isinstance(e, Sym):
        return e.name
    if isinstance(e, Func):
        return f"{e.name}({', '.join(a.key for a in e.args)})"
    if isinstance(e, Pow):
        if e.exp < 0:
            return "1/" + _print_pow_body(e.base, -e.exp)
        return _print_pow_body(e.base, e.exp)
    if isinstance(e, Add):
        out = []
        for i, t in enumerate(e.terms):
            neg, body = _neg_split(t)
            if _prec_term_needs_parens(t):
                body = f"({body})"
            if i == 0:
                out.append(("-" if neg else "") + body)
            else:
                out.append((" - " if neg else " + ") + body)
        return "".join(out)
    if isinstance(e, Mul):
        factors = list(e.factors)
        coeff = None
        if isinstance(factors[0], Num):
            coeff = factors.pop(0).value
        numer = [f for f in factors if not (isinstance(f, Pow) and f.exp < 0)]
        denom = [f for f in factors if isinstance(f, Pow) and f.exp < 0]
        parts = [_wrap(f, _PREC_MUL + 1) if isinstance(f, Add) else _wrap(f, _PREC_MUL) for f in numer]
        if coeff is None:
            head = "*".join(parts) if parts else "1"
        elif coeff == -1 and parts:
            head = "-" + "*".join(parts)
        else:
            cs = nb.format_exact(coeff)
            head = "*".join([cs] + parts)
        for d in denom:
            head += "/" + _print_pow_body(d.base, -d.exp) if d.exp != -1 else "/" + _wrap(d.base, _PREC_ATOM)
        return head
    raise TypeError(type(e))


def _prec_term_needs_parens(t: Expr) -> bool:
    return isinstance(t, Add)


# ------------------------------------------------------------------- structure


def _free(e: Expr) -> frozenset:
    if isinstance(e, Sym):
        return frozenset() if e.kind == "constant" else frozenset((e.name,))
    if isinstance(e, Num):
        return frozenset()
    return frozenset().union(*(c.free_symbols for c in children(e)))


def children(e: Expr) -> tuple:
    if isinstance(e, Add):
        return e.terms
    if isinstance(e, Mul):
        return e.factors
    if isinstance(e, Pow):
        return (e.base,)
    if isinstance(e, Func):
        return e.args
    return ()


def rebuild(e: Expr, new_children) -> Expr:
    if isinstance(e, Add):
        return add(*new_children)
    if isinstance(e, Mul):
        return mul(*new_children)
    if isinstance(e, Pow):
        return power(new_children[0], e.exp)
    if isinstance(e, Func):
        return Func(e.name, tuple(new_children))
    return e


def substitute(e: Expr, mapping: Mapping) -> Expr:
    """Replace symbols by expressions (keys: names or Sym)."""
    table = {(k.name if isinstance(k, Sym) else k): as_expr(v) for k, v in mapping.items()}
    if not table:
        return e
    memo: dict = {}

    def go(x: Expr) -> Expr:
        if not (x.free_symbols & table.keys()):
            return x
        got = memo.get(id(x))
        if got is not None:
            return got
        if isinstance(x, Sym):
            r = table[x.name]
        else:
            r = rebuild(x, [go(c) for c in children(x)])
        memo[id(x)] = r
        return r

    return go(e)


def walk(e: Expr) -> Iterable[Expr]:
    stack = [e]
    seen = set()
    while stack:
        x = stack.pop()
        if id(x) in seen:
            continue
        seen.add(id(x))
        yield x
        stack.extend(children(x))


# ------------------------------------------------------------------- calculus


def _name(s) -> str:
    return s.name if isinstance(s, Sym) else s


def diff(e: Expr, s) -> Expr:
    """Exact partial derivative of ``e`` with respect to symbol ``s``."""
    return _diff(e, _name(s))


@lru_cache(maxsize=1 << 17)
def _diff(e: Expr, s: str) -> Expr:
    if s not in e.free_symbols:
        return ZERO
    if isinstance(e, Sym):
        return ONE
    if isinstance(e, Add):
        return add(*(_diff(t, s) for t in e.terms))
    if isinstance(e, Mul):
        fs = e.factors
        terms = []
        for i, f in enumerate(fs):
            df = _diff(f, s)
            if df is ZERO or (isinstance(df, Num) and nb.is_zero(df.value)):
                continue
            terms.append(mul(*fs[:i], df, *fs[i + 1:]))
        return add(*terms)
    if isinstance(e, Pow):
        db = _diff(e.base, s)
        return mul(Num(e.exp), power(e.base, e.exp - 1), db)
    if isinstance(e, Func):
        name = e.name
        if name in ("Sk", "Ck"):
            k, x = e.args
            dx = _diff(x, s)
            dk = _diff(k, s)
            if name == "Sk":
                out = mul(Func("Ck", (k, x)), dx)
                if s in k.free_symbols:
                    # d/dk S_k(x) = (x C_k(x) - S_k(x)) / (2k)
                    dsk = mul(Fraction(1, 2), power(k, -1), add(mul(x, Func("Ck", (k, x))), mul(-1, e)))
                    out = add(out, mul(dsk, dk))
                return out
            out = mul(-1, k, Func("Sk", (k, x)), dx)
            if s in k.free_symbols:
                out = add(out, mul(Fraction(-1, 2), x, Func("Sk", (k, x)), dk))
            return out
        (a,) = e.args
        da = _diff(a, s)
        if name == "sin":
            return mul(Func("cos", (a,)), da)
        if name == "cos":
            return mul(-1, Func("sin", (a,)), da)
        if name == "sinh":
            return mul(Func("cosh", (a,)), da)
        if name == "cosh":
            return mul(Func("sinh", (a,)), da)
        if name == "exp":
            return mul(e, da)
    raise TypeError(type(e))


# ------------------------------------------------------------------ evaluation


def _binding_table(binding: Mapping) -> dict:
    out = {}
    for k, v in binding.items():
        out[_name(k)] = complex(v)
    return out


def _sk_value(k: complex, x: complex) -> complex:
    r = cmath.sqrt(k)
    if r == 0:
        return x
    return cmath.sin(r * x) / r


def _ck_value(k: complex, x: complex) -> complex:
    r = cmath.sqrt(k)
    if r == 0:
        return complex(1.0)
    return cmath.cos(r * x)


def cpow(z: complex, e: Fraction) -> complex:
    """Principal-branch power ``exp(e*Log z)``; integer exponents exact."""
    if e.denominator == 1:
        n = int(e)
        if z == 0 and n < 0:
            raise ZeroDivisionError
        return z**n
    if z == 0:
        if e < 0:
            raise ZeroDivisionError
        return 0j
    return cmath.exp(float(e) * cmath.log(z))


def evaluate(e: Expr, binding: Mapping) -> complex:
    """Evaluate at a point; ``binding`` maps names (or Syms) to numbers."""
    table = _binding_table(binding)
    memo: dict = {}

    def go(x: Expr) -> complex:
        got = memo.get(id(x))
        if got is not None:
            return got
        try:
            if isinstance(x, Num):
                r = nb.to_complex(x.value)
            elif isinstance(x, Sym):
                if x.kind == "constant":
                    r = complex(_CONSTANTS[x.name])
                elif x.name in table:
                    r = table[x.name]
                else:
                    raise EvaluationError(f"unbound symbol {x.name!r}")
            elif isinstance(x, Add):
                r = sum((go(t) for t in x.terms), 0j)
            elif isinstance(x, Mul):
                r = 1 + 0j
                for f in x.factors:
                    r *= go(f)
            elif isinstance(x, Pow):
                try:
                    r = cpow(go(x.base), x.exp)
                except ZeroDivisionError:
                    raise EvaluationError("pole (division by zero)", x) from None
            elif isinstance(x, Func):
                args = [go(a) for a in x.args]
                if x.name == "Sk":
                    r = _sk_value(*args)
                elif x.name == "Ck":
                    r = _ck_value(*args)
                else:
                    r = getattr(cmath, x.name)(args[0])
            else:
                raise TypeError(type(x))
        except OverflowError:
            raise EvaluationError("overflow", x) from None
        if not (cmath.isfinite(r)):
            raise EvaluationError("non-finite value", x)
        memo[id(x)] = r
        return r

    return go(e)
