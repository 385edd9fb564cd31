"""Exact numeric constants: rationals and Gaussian rationals.

Real constants are plain :class:`fractions.Fraction`; a constant with a
nonzero imaginary part is a :class:`GaussQ`.  Mixed arithmetic collapses
back to ``Fraction`` whenever the imaginary part cancels.  Floats are
converted exactly (binary value), so folding never loses precision.
"""

from __future__ import annotations

import math
from fractions import Fraction
from numbers import Number as _Number


class GaussQ:
    """Gaussian rational ``re + im*i`` with ``im != 0``."""

    __slots__ = ("re", "im")

    def __init__(self, re: Fraction, im: Fraction):
        self.re = re
        self.im = im

    def __repr__(self) -> str:
        return f"GaussQ({self.re}, {self.im})"

    def __eq__(self, other) -> bool:
        if isinstance(other, GaussQ):
            return self.re == other.re and self.im == other.im
        return False

    def __hash__(self) -> int:
        return hash((self.re, self.im))

    def __complex__(self) -> complex:
        return complex(float(self.re), float(self.im))

    def __neg__(self):
        return GaussQ(-self.re, -self.im)

    def __add__(self, other):
        ore, oim = _parts(other)
        if ore is None:
            return NotImplemented
        return make(self.re + ore, self.im + oim)

    __radd__ = __add__

    def __sub__(self, other):
        ore, oim = _parts(other)
        if ore is None:
            return NotImplemented
        return make(self.re - ore, self.im - oim)

    def __rsub__(self, other):
        ore, oim = _parts(other)
        if ore is None:
            return NotImplemented
        return make(ore - self.re, oim - self.im)

    def __mul__(self, other):
        ore, oim = _parts(other)
        if ore is None:
            return NotImplemented
        return make(self.re * ore - self.im * oim, self.re * oim + self.im * ore)

    __rmul__ = __mul__

    def __truediv__(self, other):
        ore, oim = _parts(other)
        if ore is None:
            return NotImplemented
        den = ore * ore + oim * oim
        if den == 0:
            raise ZeroDivisionError("division by zero constant")
        return make((self.re * ore + self.im * oim) / den, (self.im * ore - self.re * oim) / den)

    def __rtruediv__(self, other):
        ore, oim = _parts(other)
        if ore is None:
            return NotImplemented
        return GaussQ(ore, oim).__truediv__(self)


def _parts(x):
    if isinstance(x, GaussQ):
        return x.re, x.im
    if isinstance(x, (int, Fraction)):
        return Fraction(x), Fraction(0)
    return None, None


def make(re: Fraction, im: Fraction):
    """Build the canonical constant for ``re + im*i``."""
    if im == 0:
        return re
    return GaussQ(re, im)


def as_exact(x) -> Fraction | GaussQ:
    """Convert a Python number to an exact constant (floats exactly)."""
    if isinstance(x, (Fraction, GaussQ)):
        return x
    if isinstance(x, bool):
        return Fraction(int(x))
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        if not math.isfinite(x):
            raise ValueError(f"non-finite constant {x!r}")
        return Fraction(x)
    if isinstance(x, complex):
        return make(as_exact(x.real), as_exact(x.imag))
    if isinstance(x, _Number):
        return as_exact(complex(x)) if isinstance(x, complex) else Fraction(x)
    raise TypeError(f"not a number: {x!r}")


def is_zero(x) -> bool:
    return not isinstance(x, GaussQ) and x == 0


def is_one(x) -> bool:
    return not isinstance(x, GaussQ) and x == 1


def is_real(x) -> bool:
    return not isinstance(x, GaussQ)


def to_complex(x) -> complex:
    if isinstance(x, GaussQ):
        return complex(x)
    return complex(float(x))


def ipow(x, n: int):
    """Exact integer power."""
    if n == 0:
        return Fraction(1)
    if isinstance(x, Fraction):
        if x == 0 and n < 0:
            raise ZeroDivisionError("0 raised to a negative power")
        return x**n
    if n < 0:
        return Fraction(1) / ipow(x, -n)
    result = Fraction(1)
    base = x
    while n:
        if n & 1:
            result = result * base
        base = base * base
        n >>= 1
    return result


def _iroot(n: int, k: int) -> int | None:
    """Exact integer k-th root of a nonnegative integer, or None."""
    if n < 2:
        return n
    r = round(n ** (1.0 / k))
    for cand in (r - 1, r, r + 1):
        if cand >= 0 and cand**k == n:
            return cand
    # float estimate can miss for huge n; fall back to bisection
    lo, hi = 0, 1 << (n.bit_length() // k + 1)
    while lo < hi:
        mid = (lo + hi) // 2
        if mid**k < n:
            lo = mid + 1
        else:
            hi = mid
    return lo if lo**k == n else None


def exact_root(x: Fraction, q: int) -> Fraction | None:
    """Exact positive q-th root of a positive rational, or None."""
    if x <= 0:
        return None
    a = _iroot(x.numerator, q)
    b = _iroot(x.denominator, q)
    if a is None or b is None:
        return None
    return Fraction(a, b)


def format_exact(x) -> str:
    """Printable form that re-parses to the same value."""
    if isinstance(x, GaussQ):
        re = "" if x.re == 0 else format_exact(x.re)
        im = x.im
        if im == 1:
            ims = "i"
        elif im == -1:
            ims = "-i"
        else:
            ims = f"{format_exact(im)}*i"
        if not re:
            return f"({ims})"
        if ims.startswith("-"):
            return f"({re} - {ims[1:]})"
        return f"({re} + {ims})"
    if x.denominator == 1:
        return str(x.numerator)
    return f"{x.numerator}/{x.denominator}"


def sort_key(x) -> tuple:
    if isinstance(x, GaussQ):
        return (x.re, x.im)
    return (x, Fraction(0))
