"""Commutators, double brackets and bracket-derived derivatives."""
from __future__ import annotations

from math import factorial
from itertools import product
from typing import Iterable, Mapping

from .algebra import (
    AlgebraError,
    Coeff,
    Expr,
    Kind,
    MissingRelationError,
    Symbol,
    _collect,
    _merge_central,
    commutative_product,
    normal_form,
    sum_exprs,
    underline,
)


class RelationTable:
    """Commutators of every pair of covered operator symbols.

    ``values`` maps an ordered pair ``(a, b)`` (``a`` before ``b`` in the
    global order) to the central commutator ``[a, b]``.  Pairs of covered
    symbols that are absent commute.  Symbols outside ``symbols`` are not
    covered at all and trigger :class:`MissingRelationError`.
    """

    def __init__(self, symbols: Iterable[Symbol], values: Mapping[tuple, Expr] | None = None):
        self.symbols = frozenset(s for s in symbols if not s.central)
        stored = {}
        for (a, b), v in (values or {}).items():
            v = Expr.lift(v)
            if not v.is_central():
                raise AlgebraError("commutators must be central")
            for s in (a, b):
                if s not in self.symbols:
                    raise AlgebraError(f"relation mentions undeclared symbol {s}")
            if v.is_zero():
                continue
            if b < a:
                a, b, v = b, a, -v
            stored[(a, b)] = v
        self.values = stored
        self._word_cache: dict = {}
        self._nf_cache: dict = {}
        self._comm_cache: dict = {}

    @classmethod
    def from_dbrackets(cls, symbols, dbrackets: Mapping[tuple, object]) -> "RelationTable":
        """Build from double-bracket values: stores ``[a,b] = i*hbar*value``."""
        ihbar = Expr.i() * Expr.hbar()
        return cls(symbols, {pair: ihbar * Expr.lift(v) for pair, v in dbrackets.items()})

    def covers(self, s: Symbol) -> bool:
        return s.central or s in self.symbols

    def check_covers(self, symbols: Iterable[Symbol]) -> None:
        for s in symbols:
            if not s.central and s not in self.symbols:
                raise MissingRelationError(f"no relations declared for symbol {s}")

    def commutator_value(self, a: Symbol, b: Symbol) -> dict:
        """``[a, b]`` as ``{(central, hbar, ()): coeff}``."""
        key = (a, b)
        hit = self._comm_cache.get(key)
        if hit is not None:
            return hit
        self.check_covers((a, b))
        if a <= b:
            v = self.values.get((a, b))
            out = dict(v.terms) if v is not None else {}
        else:
            v = self.values.get((b, a))
            out = {k: -c for k, c in v.terms.items()} if v is not None else {}
        self._comm_cache[key] = out
        return out

    def dbracket_value(self, a: Symbol, b: Symbol) -> Expr:
        return _divide_ihbar(Expr._raw(dict(self.commutator_value(a, b))))

    def conjugate(self, axis: Symbol) -> Symbol:
        """The symbol ``c`` with ``[[axis, c]] = 1`` (position axis) or
        ``[[c, axis]] = 1`` (momentum axis)."""
        if axis.kind not in (Kind.POSITION, Kind.MOMENTUM):
            raise AlgebraError(f"{axis} is not a position or momentum")
        self.check_covers((axis,))
        one = Expr.const(1)
        for c in sorted(self.symbols, key=lambda s: s.key):
            v = self.dbracket_value(axis, c) if axis.kind is Kind.POSITION else self.dbracket_value(c, axis)
            if v == one:
                return c
        raise AlgebraError(f"{axis} has no canonical conjugate in this table")

    def __repr__(self):
        rel = ", ".join(f"[{a},{b}]={v}" for (a, b), v in sorted(self.values.items(), key=lambda kv: (kv[0][0].key, kv[0][1].key)))
        return f"RelationTable({rel})"


def _divide_ihbar(e: Expr) -> Expr:
    out = {}
    minus_i = Coeff(0, -1)
    for (c, h, w), v in e.items():
        if h < 1:
            raise AlgebraError(f"commutator term {v} is not divisible by i*hbar (malformed relation table?)")
        out[(c, h - 1, w)] = v * minus_i
    return Expr._raw(out)


def canonical_table(pairs: Iterable[tuple[Symbol, Symbol]]) -> RelationTable:
    """``[[q_i, p_i]] = 1`` for each pair, everything else commuting."""
    pairs = list(pairs)
    syms = [s for pair in pairs for s in pair]
    return RelationTable.from_dbrackets(syms, {pair: 1 for pair in pairs})


def commutator(u, v, table: RelationTable) -> Expr:
    u = normal_form(Expr.lift(u), table)
    v = normal_form(Expr.lift(v), table)
    return normal_form(u * v, table) - normal_form(v * u, table)


def dbracket(u, v, table: RelationTable) -> Expr:
    """``[[u, v]] = [u, v] / (i hbar)``, normal-ordered."""
    return _divide_ihbar(commutator(u, v, table))


def bracket_with_symbol(u: Expr, s: Symbol, table: RelationTable, left: bool = False) -> Expr:
    """``[[u, s]]`` (or ``[[s, u]]`` if ``left``) by Leibniz on each word.

    Valid because every stored commutator is central; the word order of
    ``u`` is preserved, so the result stays a tree that :func:`underline`
    can evaluate.
    """
    u = Expr.lift(u)
    table.check_covers(u.operator_symbols() | {s})
    pairs = []
    for (central, h, word), c in u.items():
        for j, t in enumerate(word):
            val = table.dbracket_value(t, s)
            if val.is_zero():
                continue
            for (c2, h2, _), v2 in val.items():
                coeff = -(c * v2) if left else c * v2
                pairs.append(((_merge_central(central, c2), h + h2, word[:j] + word[j + 1:]), coeff))
    return Expr._raw(_collect(pairs))


def partial(u, axis: Symbol, table: RelationTable) -> Expr:
    """Bracket derivative: ``d_q u = [[u, conj(q)]]``, ``d_p u = [[conj(p), u]]``.

    The result keeps the word order of ``u`` (it normal-orders to the same
    operator as :func:`dbracket` would give).
    """
    conj = table.conjugate(axis)
    if axis.kind is Kind.POSITION:
        return bracket_with_symbol(u, conj, table)
    return bracket_with_symbol(u, conj, table, left=True)


def canonical_pairs(table: RelationTable) -> list[tuple[Symbol, Symbol]]:
    pairs = []
    for s in sorted(table.symbols, key=lambda s: s.key):
        if s.kind is Kind.POSITION:
            try:
                c = table.conjugate(s)
            except AlgebraError:
                continue
            if c.kind is Kind.MOMENTUM:
                pairs.append((s, c))
    return pairs


def _commutative_diff(e: Expr, s: Symbol, n: int) -> Expr:
    for _ in range(n):
        if e.is_zero():
            break
        e = e.diff(s)
    return e


def mccoy_bracket(u, v, table: RelationTable | None = None) -> Expr:
    """Double bracket from McCoy's series over commutative symbols.

    ``u`` and ``v`` are first brought to positions-left normal form, whose
    words are read as commutative polynomials.  For ``n`` degrees of freedom
    the sum runs over multi-indices ``k``::

        sum (-i hbar)^(|k|-1) / k! (d_q^k u d_p^k v - d_q^k v d_p^k u)

    The series terminates at the polynomial degree.
    """
    u, v = Expr.lift(u), Expr.lift(v)
    if table is None:
        table = _infer_canonical(u.operator_symbols() | v.operator_symbols())
    pairs = canonical_pairs(table)
    fu = normal_form(u, table)
    fv = normal_form(v, table)
    kmax = max(fu.degree(), fv.degree())
    terms = []
    for ks in product(range(kmax + 1), repeat=len(pairs)):
        order = sum(ks)
        if order == 0:
            continue
        du_q, dv_p, dv_q, du_p = fu, fv, fv, fu
        denom = 1
        for (q, p), k in zip(pairs, ks):
            du_q = _commutative_diff(du_q, q, k)
            dv_q = _commutative_diff(dv_q, q, k)
            du_p = _commutative_diff(du_p, p, k)
            dv_p = _commutative_diff(dv_p, p, k)
            denom *= factorial(k)
        body = commutative_product(du_q, dv_p) - commutative_product(dv_q, du_p)
        if body.is_zero():
            continue
        terms.append(_minus_i_hbar_power(order - 1) * body / denom)
    return sum_exprs(terms)


def _minus_i_hbar_power(n: int) -> Expr:
    c = Coeff(1)
    for _ in range(n):
        c = c * Coeff(0, -1)
    return Expr.hbar(n) * Expr.const(c)


def _infer_canonical(symbols) -> RelationTable:
    by_index: dict[int, dict] = {}
    for s in symbols:
        if s.kind not in (Kind.POSITION, Kind.MOMENTUM):
            raise AlgebraError(f"McCoy's formula needs a canonical table; {s} is not an original variable")
        by_index.setdefault(s.index, {})[s.kind] = s
    pairs = []
    for idx, d in sorted(by_index.items()):
        if len(d) != 2:
            continue  # only one of q, p present: every term of the series vanishes for this DOF
        pairs.append((d[Kind.POSITION], d[Kind.MOMENTUM]))
    table = canonical_table(pairs)
    return RelationTable(list(symbols), table.values)


def translate(u, epsilon: Symbol, generator: Symbol, table: RelationTable, max_order: int | None = None) -> Expr:
    """``exp(eps [[., g]]) u`` summed until the adjoint series vanishes.

    With the canonical table and ``generator = p`` this is ``u(q + eps, p)``.
    """
    u = Expr.lift(u)
    if not epsilon.central:
        raise AlgebraError("epsilon must be a parameter symbol")
    bound = (u.degree() + 1) if max_order is None else max_order
    eps = Expr.sym(epsilon)
    out = u
    term = u
    for n in range(1, bound + 1):
        term = bracket_with_symbol(term, generator, table)
        if term.is_zero():
            return out
        out = out + term * eps ** n / factorial(n)
    if not bracket_with_symbol(term, generator, table).is_zero():
        raise AlgebraError("translation series did not terminate")
    return out


__all__ = [
    "RelationTable",
    "canonical_table",
    "commutator",
    "dbracket",
    "partial",
    "mccoy_bracket",
    "translate",
    "bracket_with_symbol",
    "underline",
]
