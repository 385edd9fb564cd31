"""Canonical normal form for expressions.

An expression is expanded into a sparse polynomial over *atoms*:

* symbols and (argument-normalised) function applications, with any
  rational exponent;
* monic sums (leading coefficient 1, no common monomial factor) carrying a
  negative integer exponent;
* radical bases (a normalised sum, product or power with positive-real
  content removed) carrying a non-integer exponent, below 1 for sums and
  in (0, 1) otherwise;
* positive rationals carrying an exponent in (0, 1).

Whenever an exponent combination turns a radical atom integral the factor
is re-expanded.  Pythagorean identities for (sin, cos), (sinh, cosh) and
(Sk, Ck) are applied with fixed orientation so that the result is unique
for a wide class of inputs.  Every transformation respects the principal
branch ``z^e = exp(e*Log z)``, so normalisation never changes values.

:func:`simplify` returns the canonical expression; it is idempotent.
:func:`equivalent` combines the normal form with randomised numeric checks.
"""

from __future__ import annotations

import math
import random
from fractions import Fraction
from functools import lru_cache
from typing import Mapping

from . import core
from . import numbers as nb
from .core import Add, Expr, Func, Mul, Num, Pow, Sym

Mono = tuple  # sorted tuple of (atom, exponent)
Poly = dict  # Mono -> exact coefficient

_INT_CANON: set = set()  # keys of monic sums allowed to carry integer exponents

_ODD = ("sin", "sinh", "Sk")
_ZERO_VALUE = {"sin": 0, "cos": 1, "sinh": 0, "cosh": 1, "exp": 1, "Sk": 0, "Ck": 1}
_FAMILIES = {"sin": (0, "S"), "cos": (0, "C"), "sinh": (1, "S"), "cosh": (1, "C"), "Sk": (2, "S"), "Ck": (2, "C")}
_FAMILY_NAMES = {0: ("sin", "cos"), 1: ("sinh", "cosh"), 2: ("Sk", "Ck")}


# ------------------------------------------------------------ poly arithmetic


def _const(c) -> Poly:
    return {} if nb.is_zero(c) else {(): c}


def _mono_key(m: Mono) -> tuple:
    return tuple((a.key, e) for a, e in m)


def poly_add(p: Poly, q: Poly, scale=Fraction(1)) -> Poly:
    out = dict(p)
    for m, c in q.items():
        v = out.get(m, Fraction(0)) + c * scale
        if nb.is_zero(v):
            out.pop(m, None)
        else:
            out[m] = v
    return out


def _accumulate(out: Poly, m: Mono, c) -> None:
    v = out.get(m, Fraction(0)) + c
    if nb.is_zero(v):
        out.pop(m, None)
    else:
        out[m] = v


def _fix(d: dict):
    """Canonicalise merged atom exponents.

    Returns ``(mono, coeff, pending)`` where ``pending`` lists (atom, n) pairs
    whose integer exponent requires re-expansion.
    """
    coeff = Fraction(1)
    items = []
    pending = []
    for key in sorted(d):
        atom, e = d[key]
        if e == 0:
            continue
        if e.denominator == 1:
            e = int(e)  # hashes much faster than an integral Fraction
        if isinstance(atom, Num):
            n = math.floor(e)
            if n:
                coeff = coeff * nb.ipow(atom.value, n)
                e = e - n
            if e == 0:
                continue
            items.append((atom, e))
        elif isinstance(atom, (Sym, Func)):
            items.append((atom, e))
        elif e.denominator == 1:
            if isinstance(atom, Add) and e < 0 and atom.key in _INT_CANON:
                items.append((atom, e))
            else:
                pending.append((atom, int(e)))
        else:
            # b^(n + r) = b^n b^r holds on the principal branch for integer
            # n; radical exponents of products and powers live in (0, 1),
            # sums keep negative exponents in one slot
            n = math.floor(e)
            if isinstance(atom, Add) and n < 0:
                n = 0
            if n:
                pending.append((atom, n))
            items.append((atom, e - n))
    return tuple(items), coeff, pending


def _mono_mul(m1: Mono, m2: Mono):
    d = {a.key: [a, e] for a, e in m1}
    for a, e in m2:
        slot = d.get(a.key)
        if slot is None:
            d[a.key] = [a, e]
        else:
            slot[1] = slot[1] + e
    return _fix(d)


def _mono_scale(m: Mono, n: int):
    return _fix({a.key: [a, e * n] for a, e in m})


def _resolve(m: Mono, c, pending) -> Poly:
    term = {m: c}
    for atom, n in pending:
        term = poly_mul(term, _norm_pow_int(_norm(atom), n))
    return term


def poly_mul(p: Poly, q: Poly) -> Poly:
    if len(p) > len(q):
        p, q = q, p
    out: Poly = {}
    for m1, c1 in p.items():
        for m2, c2 in q.items():
            m, k, pending = _mono_mul(m1, m2)
            c = c1 * c2 * k
            if pending:
                for mm, cc in _resolve(m, c, pending).items():
                    _accumulate(out, mm, cc)
            else:
                _accumulate(out, m, c)
    return out


def poly_pow(p: Poly, n: int) -> Poly:
    result: Poly = {(): Fraction(1)}
    base = p
    while n:
        if n & 1:
            result = poly_mul(result, base)
        n >>= 1
        if n:
            base = poly_mul(base, base)
    return result


def sorted_terms(p: Poly) -> list:
    return sorted(p.items(), key=lambda kv: _mono_key(kv[0]))


# -------------------------------------------------------------- construction


def from_poly(p: Poly) -> Expr:
    """Canonical expression for a normal-form polynomial."""
    terms = []
    for m, c in sorted_terms(p):
        factors = [Num(c)] + [core.power(a, e) for a, e in m]
        terms.append(core.mul(*factors))
    e = core.add(*terms) if terms else core.ZERO
    if e._poly is None:
        e._poly = p
    return e


def _monomial_content(p: Poly) -> dict:
    """Common monomial factor: minimal exponent per atom (absent counts as 0)."""
    monos = list(p)
    atoms = {}
    for m in monos:
        for a, _ in m:
            atoms[a.key] = a
    out = {}
    for key, a in atoms.items():
        low = None
        for m in monos:
            e = next((ee for aa, ee in m if aa.key == key), Fraction(0))
            low = e if low is None else min(low, e)
        if low:
            out[key] = [a, low]
    return out


def _rational_content(p: Poly):
    if not all(nb.is_real(c) for c in p.values()):
        return Fraction(1)
    num = 0
    den = 1
    for c in p.values():
        num = math.gcd(num, c.numerator)
        den = den * c.denominator // math.gcd(den, c.denominator)
    return Fraction(num, den)


def _norm_pow_int(p: Poly, n: int) -> Poly:
    if n == 0:
        return _const(Fraction(1))
    if n > 0:
        return poly_pow(p, n)
    if not p:
        raise core.ExprError("division by zero")
    if len(p) == 1:
        ((m, c),) = p.items()
        mm, k, pending = _mono_scale(m, n)
        return _resolve(mm, nb.ipow(c, n) * k, pending)
    content = _monomial_content(p)
    inv = tuple((a, -e) for a, e in content.values())
    q: Poly = {}
    for m, c in p.items():
        mm, k, pending = _mono_mul(m, inv)
        for mmm, cc in _resolve(mm, c * k, pending).items():
            _accumulate(q, mmm, cc)
    lead = sorted_terms(q)[0][1]
    q = {m: c / lead for m, c in q.items()}
    if len(q) == 1:
        return poly_mul(_norm_pow_int(q, n), _norm_pow_int({tuple((a, e) for a, e in content.values()): lead}, n))
    atom = from_poly(q)
    _INT_CANON.add(atom.key)
    factor = {((atom, Fraction(n)),): Fraction(1)}
    outer = {tuple(sorted(((a, e) for a, e in content.values()), key=lambda t: t[0].key)): lead}
    return poly_mul(factor, _norm_pow_int(outer, n))


def _factor_qth(t: int, q: int):
    """Write t = s^q * u with u free of small q-th power factors."""
    s, u = 1, t
    p = 2
    while p * p <= u and p < 1000:
        pq = p**q
        while u % pq == 0:
            u //= pq
            s *= p
        p += 1
    r = nb.exact_root(Fraction(u), q)
    if r is not None and r.denominator == 1:
        s *= r.numerator
        u = 1
    return s, u


def _num_pow(c, e: Fraction) -> Poly:
    n = math.floor(e)
    f = e - n
    coeff = nb.ipow(c, n)
    if f == 0:
        return _const(coeff)
    if nb.is_zero(c):
        return {}
    if nb.is_real(c) and c > 0:
        q, r = f.denominator, f.numerator
        s1, u1 = _factor_qth(c.numerator, q)
        s2, u2 = _factor_qth(c.denominator, q)
        # (a/b)^(r/q) = a^(r/q) * b^((q-r)/q) / b
        coeff = coeff * Fraction(s1**r) * Fraction(s2 ** (q - r)) / c.denominator
        d = {}
        if u1 != 1:
            d[str(u1)] = [Num(u1), Fraction(r, q)]
        if u2 != 1:
            d[str(u2)] = [Num(u2), Fraction(q - r, q)]
        m, k, _ = _fix(d)
        return {m: coeff * k}
    if nb.is_real(c) and f.denominator == 2:
        i_part = nb.ipow(core.I.value, f.numerator % 4)
        inner = _num_pow(-c, f)
        return {m: v * coeff * i_part for m, v in inner.items()}
    m, k, _ = _fix({"c": [Num(c), f]})
    return {m: coeff * k}


def _norm_pow_frac(p: Poly, e: Fraction) -> Poly:
    if not p:
        if e < 0:
            raise core.ExprError("division by zero")
        return {}
    if len(p) == 1:
        ((m, c),) = p.items()
        if m == ():
            return _num_pow(c, e)
        if nb.is_real(c) and c > 0:
            outer = _num_pow(c, e)
            if len(m) == 1 and -1 < m[0][1] <= 1:
                atom, a = m[0]
                mm, k, pending = _fix({atom.key: [atom, a * e]})
                return poly_mul(outer, _resolve(mm, k, pending))
            base = from_poly({m: Fraction(1)})
            return poly_mul(outer, _radical(base, e))
        return _radical(from_poly(p), e)
    k = _rational_content(p)
    if k != 1:
        outer = _num_pow(k, e)
        q = {m: c / k for m, c in p.items()}
        return poly_mul(outer, _radical(from_poly(q), e))
    return _radical(from_poly(p), e)


def _radical(base: Expr, e: Fraction) -> Poly:
    m, k, pending = _fix({base.key: [base, e]})
    return _resolve(m, k, pending)


def _norm_func(e: Func) -> Poly:
    args = tuple(simplify(a) for a in e.args)
    name = e.name
    if name in ("Sk", "Ck") and isinstance(args[0], Num):
        explicit = (core.sk_explicit if name == "Sk" else core.ck_explicit)(args[0], args[1])
        if explicit is not None:
            return _norm(explicit)
    x = args[-1]
    if isinstance(x, Num) and nb.is_zero(x.value):
        if name in ("Sk", "Ck") or name in _ZERO_VALUE:
            return _const(Fraction(_ZERO_VALUE[name]))
    sign = Fraction(1)
    if name != "exp":
        xp = normalize(x)
        if xp:
            lead = sorted_terms(xp)[0][1]
            if nb.is_real(lead) and lead < 0:
                x = from_poly({m: -c for m, c in xp.items()})
                args = args[:-1] + (x,)
                if name in _ODD:
                    sign = Fraction(-1)
    atom = Func(name, args)
    return {((atom, Fraction(1)),): sign}


@lru_cache(maxsize=1 << 16)
def _norm(e: Expr) -> Poly:
    if e._poly is not None:
        return e._poly
    if isinstance(e, Num):
        return _const(e.value)
    if isinstance(e, Sym):
        return {((e, Fraction(1)),): Fraction(1)}
    if isinstance(e, Add):
        out: Poly = {}
        for t in e.terms:
            for m, c in _norm(t).items():
                _accumulate(out, m, c)
        return out
    if isinstance(e, Mul):
        out = _const(Fraction(1))
        for f in e.factors:
            out = poly_mul(out, _norm(f))
            if not out:
                break
        return out
    if isinstance(e, Pow):
        base = normalize(e.base)
        if e.exp.denominator == 1:
            return _norm_pow_int(base, int(e.exp))
        return _norm_pow_frac(base, e.exp)
    if isinstance(e, Func):
        return _norm_func(e)
    raise TypeError(type(e))


# ----------------------------------------------------- Pythagorean rewriting


def _family_slots(m: Mono):
    """Map family key -> {'S': (atom, exp), 'C': (atom, exp), 'args': args}."""
    fams: dict = {}
    for a, e in m:
        if isinstance(a, Func) and a.name in _FAMILIES:
            fam, role = _FAMILIES[a.name]
            key = (fam,) + tuple(x.key for x in a.args)
            slot = fams.setdefault(key, {"fam": fam, "args": a.args})
            slot[role] = (a, e)
    return fams


def _rewrite_term(m: Mono, c):
    for slot in _family_slots(m).values():
        fam, args = slot["fam"], slot["args"]
        sname, cname = _FAMILY_NAMES[fam]
        s_atom, a = slot.get("S", (Func(sname, args), Fraction(0)))
        c_atom, b = slot.get("C", (Func(cname, args), Fraction(0)))
        if a.denominator != 1 or b.denominator != 1:
            continue
        if fam == 0:
            k = _const(Fraction(1))
        elif fam == 1:
            k = _const(Fraction(-1))
        else:
            k = normalize(args[0])
        rest = tuple((x, e) for x, e in m if x.key not in (s_atom.key, c_atom.key))
        s1 = {((s_atom, Fraction(1)),): Fraction(1)}
        c1 = {((c_atom, Fraction(1)),): Fraction(1)}

        def build(aa, bb, factor: Poly) -> Poly:
            d = {x.key: [x, e] for x, e in rest}
            if aa:
                d[s_atom.key] = [s_atom, Fraction(aa)]
            if bb:
                d[c_atom.key] = [c_atom, Fraction(bb)]
            mm, kk, pending = _fix(d)
            return poly_mul(_resolve(mm, c * kk, pending), factor)

        if b >= 2:
            # C^2 -> 1 - k S^2
            repl = poly_add(_const(Fraction(1)), poly_mul(k, poly_mul(s1, s1)), Fraction(-1))
            return build(a, b - 2, repl)
        if b < 0 and a >= 2 and len(k) == 1 and () in k:
            # S^2 -> (1 - C^2)/k
            repl = poly_add(_const(Fraction(1)), poly_mul(c1, c1), Fraction(-1))
            repl = {mm: cc / k[()] for mm, cc in repl.items()}
            return build(a - 2, b, repl)
        if a < 0 and b < 0:
            # multiply by 1 = C^2 + k S^2
            return poly_add(build(a, b + 2, _const(Fraction(1))), build(a + 2, b, k))
    return None


def rewrite(p: Poly) -> Poly:
    out: Poly = {}
    work = list(p.items())
    while work:
        m, c = work.pop()
        repl = _rewrite_term(m, c)
        if repl is None:
            _accumulate(out, m, c)
        else:
            work.extend(repl.items())
    return out


# ------------------------------------------------------------------ public API


def normalize(e: Expr) -> Poly:
    """Normal-form polynomial of ``e`` (shared; do not mutate)."""
    if e._poly is not None:
        return e._poly
    p = rewrite(_norm(e))
    e._poly = p
    return p


def simplify(e: Expr) -> Expr:
    """Canonical expression equal to ``e``; ``simplify(simplify(e)) == simplify(e)``."""
    return from_poly(normalize(e))


def is_zero(e: Expr) -> bool:
    return not normalize(e)


def _angle_sum(name: str, args: tuple, a: Expr, b: Expr) -> Expr:
    """Addition theorem for ``name(a + b)``."""
    if name == "exp":
        return core.mul(core.exp(a), core.exp(b))
    if name in ("Sk", "Ck"):
        k = args[0]
        Sa, Sb, Ca, Cb = core.s_kappa(k, a), core.s_kappa(k, b), core.c_kappa(k, a), core.c_kappa(k, b)
        if name == "Sk":
            return core.add(core.mul(Sa, Cb), core.mul(Ca, Sb))
        return core.add(core.mul(Ca, Cb), core.mul(-1, k, Sa, Sb))
    S, C = ("sin", "cos") if name in ("sin", "cos") else ("sinh", "cosh")
    Sa, Sb, Ca, Cb = core.func(S, a), core.func(S, b), core.func(C, a), core.func(C, b)
    if name == S:
        return core.add(core.mul(Sa, Cb), core.mul(Ca, Sb))
    sign = -1 if name == "cos" else 1
    return core.add(core.mul(Ca, Cb), core.mul(sign, Sa, Sb))


def expand_angles(e: Expr) -> Expr:
    """Split sums inside sin, cos, sinh, cosh, exp, Sk and Ck arguments."""

    def go(x: Expr) -> Expr:
        kids = core.children(x)
        if kids:
            x = core.rebuild(x, [go(c) for c in kids])
        if isinstance(x, Func) and x.name in _FAMILIES or isinstance(x, Func) and x.name == "exp":
            arg = x.args[-1]
            if isinstance(arg, Add) and len(arg.terms) > 1:
                return go(_angle_sum(x.name, x.args, arg.terms[0], core.add(*arg.terms[1:])))
        return x

    return go(e)


def vanishes(e: Expr) -> bool:
    """Exact zero test that goes beyond the normal form.

    After the normal form fails, sums inside trigonometric and tagged
    arguments are split by the addition theorems and the expression is
    multiplied through by the sums it divides by (to their highest power),
    then normalised again.  Both steps preserve being zero wherever the
    cleared denominators are finite and nonzero, so a ``True`` answer is an
    identity on that (dense) domain.
    """
    if is_zero(e):
        return True
    p = normalize(expand_angles(simplify(e)))
    if not p:
        return True
    low: dict = {}
    for m in p:
        for a, k in m:
            if isinstance(a, Add) and k < 0:
                low[a.key] = (a, min(k, low.get(a.key, (a, 0))[1]))
    for a, k in low.values():
        p = poly_mul(p, {((a, -k),): Fraction(1)})
    return not rewrite(p)


def equivalent(a: Expr, b: Expr, trials: int = 20, tol: float = 1e-10, seed: int = 0,
               domain: Mapping | None = None) -> bool:
    """Decide ``a == b``: exact normal form first, then random complex points.

    ``domain`` may map symbol names to (low, high) real ranges; other symbols
    are sampled in (0.3, 1.7) with a small imaginary part.
    """
    diff = core.add(a, core.mul(-1, b))
    if is_zero(diff):
        return True
    rng = random.Random(seed)
    names = sorted(diff.free_symbols | a.free_symbols | b.free_symbols)
    good = 0
    attempts = 0
    while good < trials and attempts < 10 * trials:
        attempts += 1
        point = {}
        for n in names:
            lo, hi = (domain or {}).get(n, (0.3, 1.7))
            point[n] = complex(rng.uniform(lo, hi), rng.uniform(-0.2, 0.2))
        try:
            va = core.evaluate(a, point)
            vb = core.evaluate(b, point)
        except core.EvaluationError:
            continue
        if abs(va - vb) > tol * max(1.0, abs(va), abs(vb)):
            return False
        good += 1
    return good > 0
