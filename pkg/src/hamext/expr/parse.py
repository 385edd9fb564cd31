"""Recursive-descent parser for the expression text format.

Grammar::

    expr     := term (('+' | '-') term)*
    term     := factor (('*' | '/') factor)*
    factor   := '-' factor | '+' factor | base ('^' exponent)?
    exponent := ['-'] INT | INT '/' INT | '(' ['-'] INT ['/' INT] ')'
    base     := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

Decimal literals are read as exact rationals, ``i`` is the imaginary unit
and ``pi`` is the circle constant.  Identifiers must be declared through
``symbols``; anything else raises :class:`UnknownIdentifier`.
"""

from __future__ import annotations

import re
from fractions import Fraction
from typing import Mapping

from . import core
from .core import Expr

_TOKEN = re.compile(r"\s*(?:(\d+\.\d*|\.\d+|\d+)([eE][-+]?\d+)?|([A-Za-z_][A-Za-z_0-9]*)|(\S))")


class ParseError(ValueError):
    """Syntax error with the character offset where it was detected."""

    def __init__(self, message: str, text: str, pos: int):
        super().__init__(f"{message} at position {pos}: {text!r}")
        self.text = text
        self.pos = pos


class UnknownIdentifier(ParseError):
    """An identifier that is neither declared nor built in."""

    def __init__(self, name: str, text: str, pos: int):
        ParseError.__init__(self, f"unknown identifier {name!r}", text, pos)
        self.name = name


def _tokenize(text: str) -> list:
    toks = []
    pos = 0
    while True:
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            if text[pos:].strip():
                raise ParseError("unexpected character", text, pos)
            break
        start = m.start(1) if m.group(1) else (m.start(3) if m.group(3) else m.start(4))
        if m.group(1):
            value = Fraction(m.group(1))
            if m.group(2):
                value *= Fraction(10) ** int(m.group(2)[1:])
            toks.append(("num", value, start))
        elif m.group(3):
            toks.append(("name", m.group(3), start))
        else:
            toks.append(("op", m.group(4), start))
        pos = m.end()
    toks.append(("end", None, len(text)))
    return toks


class _Parser:
    def __init__(self, text: str, symbols: Mapping[str, Expr]):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.symbols = symbols

    def peek(self):
        return self.toks[self.i]

    def take(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, op: str):
        t = self.take()
        if t[0] != "op" or t[1] != op:
            raise ParseError(f"expected {op!r}", self.text, t[2])
        return t

    def error(self, msg: str):
        raise ParseError(msg, self.text, self.peek()[2])

    def parse(self) -> Expr:
        if self.peek()[0] == "end":
            self.error("empty expression")
        e = self.expr()
        if self.peek()[0] != "end":
            self.error("unexpected token")
        return e

    def expr(self) -> Expr:
        terms = [self.term()]
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            t = self.term()
            terms.append(t if op == "+" else core.mul(-1, t))
        return core.add(*terms) if len(terms) > 1 else terms[0]

    def term(self) -> Expr:
        e = self.factor()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            f = self.factor()
            if op == "*":
                e = core.mul(e, f)
            else:
                try:
                    e = core.mul(e, core.power(f, -1))
                except core.ExprError as exc:
                    raise ParseError(str(exc), self.text, self.peek()[2]) from None
        return e

    def factor(self) -> Expr:
        t = self.peek()
        if t[0] == "op" and t[1] == "-":
            self.take()
            return core.mul(-1, self.factor())
        if t[0] == "op" and t[1] == "+":
            self.take()
            return self.factor()
        b = self.base()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            pos = self.peek()[2]
            ex = self.exponent()
            try:
                return core.power(b, ex)
            except core.ExprError as exc:
                raise ParseError(str(exc), self.text, pos) from None
        return b

    def _int(self) -> int:
        sign = 1
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            sign = -1
        t = self.take()
        if t[0] != "num" or t[1].denominator != 1:
            raise ParseError("exponent must be a rational number", self.text, t[2])
        return sign * int(t[1])

    def exponent(self) -> Fraction:
        if self.peek()[0] == "op" and self.peek()[1] == "(":
            self.take()
            p = self._int()
            q = 1
            if self.peek()[0] == "op" and self.peek()[1] == "/":
                self.take()
                q = self._int()
            self.expect(")")
        else:
            # a bare exponent is an integer: a^p/q reads as (a^p)/q
            p = self._int()
            q = 1
        if q == 0:
            raise ParseError("zero denominator in exponent", self.text, self.peek()[2])
        return Fraction(p, q)

    def base(self) -> Expr:
        t = self.take()
        kind, val, pos = t
        if kind == "num":
            return core.Num(val)
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "name":
            if self.peek()[0] == "op" and self.peek()[1] == "(" and (val in core.ARITY or val == "sqrt"):
                self.take()
                args = [self.expr()]
                while self.peek()[0] == "op" and self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                want = 1 if val == "sqrt" else core.ARITY[val]
                if len(args) != want:
                    raise ParseError(f"{val} takes {want} argument(s)", self.text, pos)
                if val == "Sk":
                    return core.s_kappa(*args)
                if val == "Ck":
                    return core.c_kappa(*args)
                return core.func(val, *args)
            if val in self.symbols:
                return self.symbols[val]
            if val == "i":
                return core.I
            if val == "pi":
                return core.PI
            raise UnknownIdentifier(val, self.text, pos)
        if kind == "end":
            raise ParseError("unexpected end of input", self.text, pos)
        raise ParseError(f"unexpected {val!r}", self.text, pos)


def parse_expr(text: str, symbols: Mapping[str, Expr] | None = None) -> Expr:
    """Parse ``text`` using ``symbols`` (name -> Sym or expression)."""
    if not isinstance(text, str):
        raise TypeError("expression text must be a string")
    return _Parser(text, symbols or {}).parse()
