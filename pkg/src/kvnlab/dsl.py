"""Expression DSL: tokenizer, recursive-descent parser and printer.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('+' | '-') unary | power
    power  := atom ('^' ['-'] INT)?
    atom   := INT | IDENT | 'hbar' | 'i' | '(' expr ')'

Identifiers are ``[a-z][a-z0-9_]*`` with an optional ``~`` suffix; the form
``q~_1`` is accepted as a spelling of ``q_1~``.  Multiplication order is kept
exactly as written.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

from .algebra import AlgebraError, Coeff, Expr, Kind, Symbol

RESERVED = frozenset({"hbar", "i"})


class ParseError(Exception):
    def __init__(self, message: str, position: int | None = None, text: str | None = None):
        self.position = position
        self.text = text
        if position is not None:
            message = f"{message} (at column {position + 1})"
        super().__init__(message)


class UndeclaredIdentifier(ParseError):
    pass


_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<int>\d+)"
    r"|(?P<ident>[a-z][a-z0-9_]*(?:~(?:_[0-9]+)?)?)"
    r"|(?P<op>[-+*/^()])"
    r")"
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    pos: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            start = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ParseError(f"unexpected character {text[start]!r}", start, text)
        kind = m.lastgroup
        value = m.group(kind)
        start = m.start(kind)
        if kind == "ident":
            m2 = re.fullmatch(r"([a-z][a-z0-9_]*)~_([0-9]+)", value)
            if m2:
                value = f"{m2.group(1)}_{m2.group(2)}~"
        tokens.append(Token(kind, value, start))
        pos = m.end()
    tokens.append(Token("end", "", n))
    return tokens


class _Parser:
    def __init__(self, text: str, names: Mapping[str, Symbol]):
        self.text = text
        self.names = names
        self.tokens = tokenize(text)
        self.i = 0

    def peek(self) -> Token:
        return self.tokens[self.i]

    def take(self) -> Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> Token:
        tok = self.take()
        if tok.text != text or tok.kind != "op":
            raise ParseError(f"expected {text!r}, found {tok.text or 'end of input'!r}", tok.pos, self.text)
        return tok

    def parse(self) -> Expr:
        if self.peek().kind == "end":
            raise ParseError("empty expression", 0, self.text)
        e = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            raise ParseError(f"unexpected {tok.text!r}", tok.pos, self.text)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.take().text
            rhs = self.term()
            e = e + rhs if op == "+" else e - rhs
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek().kind == "op" and self.peek().text in "*/":
            tok = self.take()
            rhs = self.unary()
            if tok.text == "*":
                e = e * rhs
            else:
                try:
                    e = e / rhs
                except (AlgebraError, ZeroDivisionError) as exc:
                    raise ParseError(str(exc), tok.pos, self.text) from None
        return e

    def unary(self) -> Expr:
        tok = self.peek()
        if tok.kind == "op" and tok.text in "+-":
            self.take()
            e = self.unary()
            return -e if tok.text == "-" else e
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        tok = self.peek()
        if tok.kind == "op" and tok.text == "^":
            self.take()
            sign = 1
            if self.peek().kind == "op" and self.peek().text == "-":
                self.take()
                sign = -1
            exp_tok = self.take()
            if exp_tok.kind != "int":
                raise ParseError("exponent must be an integer literal", exp_tok.pos, self.text)
            try:
                return base ** (sign * int(exp_tok.text))
            except AlgebraError as exc:
                raise ParseError(str(exc), exp_tok.pos, self.text) from None
        return base

    def atom(self) -> Expr:
        tok = self.take()
        if tok.kind == "int":
            return Expr.const(int(tok.text))
        if tok.kind == "ident":
            if tok.text == "hbar":
                return Expr.hbar()
            if tok.text == "i":
                return Expr.i()
            sym = self.names.get(tok.text)
            if sym is None:
                raise UndeclaredIdentifier(f"undeclared identifier {tok.text!r}", tok.pos, self.text)
            return Expr.sym(sym)
        if tok.kind == "op" and tok.text == "(":
            e = self.expr()
            self.expect(")")
            return e
        raise ParseError(f"unexpected {tok.text or 'end of input'!r}", tok.pos, self.text)


def parse_expr(text: str, names: Mapping[str, Symbol]) -> Expr:
    """Parse ``text`` against the declared symbols in ``names``.

    ``names`` maps identifiers to symbols; a :class:`TildeTheory` namespace or
    any plain dict works.  The result keeps the written multiplication order.
    """
    if hasattr(names, "namespace"):
        names = names.namespace()
    return _Parser(text, names).parse()


# --------------------------------------------------------------------------
# printing
# --------------------------------------------------------------------------


def _format_rational(x: Fraction) -> str:
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


def _format_coeff(c: Coeff) -> tuple[str, str]:
    """Return (sign, magnitude text); magnitude ``""`` means unit."""
    re_, im = c.re, c.im
    if not im:
        sign = "-" if re_ < 0 else "+"
        mag = abs(re_)
        return sign, "" if mag == 1 else _format_rational(mag)
    if not re_:
        sign = "-" if im < 0 else "+"
        mag = abs(im)
        return sign, "i" if mag == 1 else f"{_format_rational(mag)}*i"
    im_text = "i" if abs(im) == 1 else f"{_format_rational(abs(im))}*i"
    return "+", f"({_format_rational(re_)} {'-' if im < 0 else '+'} {im_text})"


def _runs(word: tuple):
    out = []
    for s in word:
        if out and out[-1][0] == s:
            out[-1][1] += 1
        else:
            out.append([s, 1])
    return out


def _power(name: str, e: int) -> str:
    return name if e == 1 else f"{name}^{e}"


def format_term(central: tuple, h: int, word: tuple, c: Coeff) -> tuple[str, str]:
    sign, mag = _format_coeff(c)
    factors = []
    if mag:
        factors.append(mag)
    if h:
        factors.append(_power("hbar", h))
    factors.extend(_power(s.name, e) for s, e in central if e > 0)
    factors.extend(_power(s.name, e) for s, e in _runs(word))
    body = "*".join(factors) if factors else "1"
    denominators = [_power(s.name, -e) for s, e in central if e < 0]
    for d in denominators:
        body += f"/{d}"
    return sign, body


def _term_order(item):
    (central, h, word), _ = item
    return (tuple(s.key for s in word), h, tuple((s.key, e) for s, e in central))


def format_expr(e: Expr) -> str:
    """ASCII rendering that re-parses to an identical monomial sum."""
    if e.is_zero():
        return "0"
    parts = []
    for n, ((central, h, word), c) in enumerate(sorted(e.items(), key=_term_order)):
        sign, body = format_term(central, h, word, c)
        if n == 0:
            parts.append(("-" if sign == "-" else "") + body)
        else:
            parts.append(f" {sign} {body}")
    return "".join(parts)


def declare(names: Mapping[str, Symbol] | None = None, *, params=()) -> dict:
    """A fresh namespace: ``names`` plus parameter symbols for ``params``."""
    out = dict(names or {})
    for p in params:
        if p in RESERVED:
            raise ValueError(f"{p!r} is reserved")
        out[p] = Symbol(p, Kind.PARAMETER, 0)
    return out
