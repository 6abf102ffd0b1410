"""Exact noncommutative polynomial algebra.

An :class:`Expr` is a finite sum of monomials.  Each monomial carries a
Gaussian-rational coefficient, a power of the formal symbol ``hbar``, a
product of central symbols (parameters, possibly with negative powers) and an
ordered word of operator symbols.

Arithmetic on ``Expr`` never reorders words: ``q*p - p*q`` keeps both
monomials.  The unreduced monomial sum therefore *is* the retained input tree
(expanded), which is what :func:`underline` evaluates.  Reduction to the
canonical operator form happens only in :func:`normal_form`, against a
relation table.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Iterable, Mapping


class AlgebraError(Exception):
    """Base class for errors raised by the symbolic engine."""


class MissingRelationError(AlgebraError):
    pass


class Coeff:
    """Gaussian rational ``re + im*i`` with exact :class:`Fraction` parts."""

    __slots__ = ("re", "im")

    def __init__(self, re=0, im=0):
        self.re = re if type(re) is Fraction else Fraction(re)
        self.im = im if type(im) is Fraction else Fraction(im)

    @classmethod
    def of(cls, x) -> "Coeff":
        if isinstance(x, Coeff):
            return x
        if isinstance(x, (int, Rational)):
            return cls(x, 0)
        if isinstance(x, complex):
            re, im = x.real, x.imag
            if re != int(re) or im != int(im):
                raise TypeError("inexact complex literal; use Fractions")
            return cls(int(re), int(im))
        raise TypeError(f"cannot use {type(x).__name__} as an exact coefficient")

    def __bool__(self):
        return bool(self.re) or bool(self.im)

    def __eq__(self, other):
        if not isinstance(other, Coeff):
            try:
                other = Coeff.of(other)
            except TypeError:
                return NotImplemented
        return self.re == other.re and self.im == other.im

    def __hash__(self):
        return hash((self.re, self.im))

    def __add__(self, other):
        return Coeff(self.re + other.re, self.im + other.im)

    def __sub__(self, other):
        return Coeff(self.re - other.re, self.im - other.im)

    def __neg__(self):
        return Coeff(-self.re, -self.im)

    def __mul__(self, other):
        a, b, c, d = self.re, self.im, other.re, other.im
        if not b and not d:
            return Coeff(a * c, 0)
        return Coeff(a * c - b * d, a * d + b * c)

    def inverse(self) -> "Coeff":
        den = self.re * self.re + self.im * self.im
        if not den:
            raise ZeroDivisionError("division by zero coefficient")
        return Coeff(self.re / den, -self.im / den)

    def conjugate(self) -> "Coeff":
        return Coeff(self.re, -self.im)

    def __complex__(self):
        return complex(float(self.re), float(self.im))

    def __repr__(self):
        if not self.im:
            return f"Coeff({self.re})"
        return f"Coeff({self.re}, {self.im})"


ONE = Coeff(1)
I_UNIT = Coeff(0, 1)


class Kind(enum.Enum):
    POSITION = "position"
    TILDE_MOMENTUM = "tilde-momentum"
    TILDE_POSITION = "tilde-position"
    MOMENTUM = "momentum"
    PARAMETER = "parameter"
    VELOCITY = "velocity"
    TILDE_VELOCITY = "tilde-velocity"


# global ordering of operator kinds inside a DOF: q, p~, q~, p
_KIND_RANK = {
    Kind.POSITION: 0,
    Kind.TILDE_MOMENTUM: 1,
    Kind.TILDE_POSITION: 2,
    Kind.MOMENTUM: 3,
    Kind.VELOCITY: 4,
    Kind.TILDE_VELOCITY: 5,
    Kind.PARAMETER: 6,
}

CENTRAL_KINDS = frozenset({Kind.PARAMETER, Kind.VELOCITY, Kind.TILDE_VELOCITY})
ORIGINAL_KINDS = frozenset({Kind.POSITION, Kind.MOMENTUM})
TILDE_KINDS = frozenset({Kind.TILDE_POSITION, Kind.TILDE_MOMENTUM})


@dataclass(frozen=True, eq=False)
class Symbol:
    """A named generator.  Central kinds commute with everything."""

    name: str
    kind: Kind
    index: int = 0
    key: tuple = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "key", (self.index, _KIND_RANK[self.kind], self.name))

    @property
    def central(self) -> bool:
        return self.kind in CENTRAL_KINDS

    def __eq__(self, other):
        return isinstance(other, Symbol) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __lt__(self, other):
        return self.key < other.key

    def __le__(self, other):
        return self.key <= other.key

    def __str__(self):
        return self.name


def parameter(name: str) -> Symbol:
    return Symbol(name, Kind.PARAMETER, 0)


# A monomial key: (central factors, hbar power, operator word).
# central factors is a sorted tuple of (Symbol, nonzero int exponent).
Key = tuple


def _merge_central(a: tuple, b: tuple) -> tuple:
    if not a:
        return b
    if not b:
        return a
    powers = dict(a)
    for s, e in b:
        n = powers.get(s, 0) + e
        if n:
            powers[s] = n
        else:
            del powers[s]
    return tuple(sorted(powers.items(), key=lambda item: item[0].key))


def _collect(pairs: Iterable[tuple[Key, Coeff]]) -> dict:
    out: dict = {}
    for key, c in pairs:
        prev = out.get(key)
        if prev is None:
            if c:
                out[key] = c
        else:
            s = prev + c
            if s:
                out[key] = s
            else:
                del out[key]
    return out


class Expr:
    """Immutable sum of monomials over noncommuting symbols."""

    __slots__ = ("_terms", "_hash")

    def __init__(self, terms: Mapping[Key, Coeff] | None = None):
        self._terms = dict(terms) if terms else {}
        self._hash = None

    # ---------------------------------------------------------------- builders
    @classmethod
    def _raw(cls, terms: dict) -> "Expr":
        e = cls.__new__(cls)
        e._terms = terms
        e._hash = None
        return e

    @classmethod
    def const(cls, value) -> "Expr":
        c = Coeff.of(value)
        return cls._raw({((), 0, ()): c} if c else {})

    @classmethod
    def sym(cls, s: Symbol) -> "Expr":
        if s.central:
            return cls._raw({(((s, 1),), 0, ()): ONE})
        return cls._raw({((), 0, (s,)): ONE})

    @classmethod
    def hbar(cls, power: int = 1) -> "Expr":
        if power < 0:
            raise AlgebraError("negative powers of hbar are not allowed")
        return cls._raw({((), power, ()): ONE})

    @classmethod
    def i(cls) -> "Expr":
        return cls._raw({((), 0, ()): I_UNIT})

    @classmethod
    def zero(cls) -> "Expr":
        return cls._raw({})

    @classmethod
    def lift(cls, x) -> "Expr":
        if isinstance(x, Expr):
            return x
        if isinstance(x, Symbol):
            return cls.sym(x)
        return cls.const(x)

    # --------------------------------------------------------------- queries
    @property
    def terms(self) -> Mapping[Key, Coeff]:
        return self._terms

    def items(self):
        return self._terms.items()

    def __len__(self):
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def is_central(self) -> bool:
        return all(not w for (_, _, w) in self._terms)

    def is_hbar_free(self) -> bool:
        return all(h == 0 for (_, h, _) in self._terms)

    def symbols(self) -> frozenset:
        out = set()
        for central, _, word in self._terms:
            out.update(word)
            out.update(s for s, _ in central)
        return frozenset(out)

    def operator_symbols(self) -> frozenset:
        return frozenset(s for (_, _, w) in self._terms for s in w)

    def degree(self) -> int:
        return max((len(w) for (_, _, w) in self._terms), default=0)

    def max_hbar(self) -> int:
        return max((h for (_, h, _) in self._terms), default=0)

    def scalar_value(self) -> Coeff:
        """The coefficient of a pure number; raises if not a plain constant."""
        if not self._terms:
            return Coeff(0)
        if list(self._terms) != [((), 0, ())]:
            raise AlgebraError(f"{self} is not a plain number")
        return self._terms[((), 0, ())]

    # ------------------------------------------------------------ arithmetic
    def __add__(self, other):
        other = Expr.lift(other)
        out = dict(self._terms)
        for k, c in other._terms.items():
            prev = out.get(k)
            if prev is None:
                out[k] = c
            else:
                s = prev + c
                if s:
                    out[k] = s
                else:
                    del out[k]
        return Expr._raw(out)

    __radd__ = __add__

    def __neg__(self):
        return Expr._raw({k: -c for k, c in self._terms.items()})

    def __sub__(self, other):
        return self + (-Expr.lift(other))

    def __rsub__(self, other):
        return Expr.lift(other) - self

    def __mul__(self, other):
        if not isinstance(other, Expr):
            if isinstance(other, Symbol):
                other = Expr.sym(other)
            else:
                c = Coeff.of(other)
                if not c:
                    return Expr.zero()
                return Expr._raw({k: v * c for k, v in self._terms.items()})
        pairs = []
        for (c1, h1, w1), a in self._terms.items():
            for (c2, h2, w2), b in other._terms.items():
                pairs.append(((_merge_central(c1, c2), h1 + h2, w1 + w2), a * b))
        return Expr._raw(_collect(pairs))

    def __rmul__(self, other):
        return Expr.lift(other) * self

    def inverse(self) -> "Expr":
        """Inverse of a single central monomial (number times parameter powers)."""
        if len(self._terms) != 1:
            raise AlgebraError("division only by scalars or parameters")
        (central, h, word), c = next(iter(self._terms.items()))
        if word or h:
            raise AlgebraError("division only by scalars or parameters")
        if any(s.kind is not Kind.PARAMETER for s, _ in central):
            raise AlgebraError("division only by scalars or parameters")
        inv_central = tuple((s, -e) for s, e in central)
        return Expr._raw({(inv_central, 0, ()): c.inverse()})

    def __truediv__(self, other):
        return self * Expr.lift(other).inverse()

    def __rtruediv__(self, other):
        return Expr.lift(other) * self.inverse()

    def __pow__(self, n: int):
        if not isinstance(n, int):
            raise TypeError("integer exponents only")
        if n < 0:
            return self.inverse() ** (-n)
        out = Expr.const(1)
        base = self
        while n:
            if n & 1:
                out = out * base
            n >>= 1
            if n:
                base = base * base
        return out

    # -------------------------------------------------------------- equality
    def __eq__(self, other):
        if not isinstance(other, Expr):
            try:
                other = Expr.lift(other)
            except TypeError:
                return NotImplemented
        return self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(frozenset(self._terms.items()))
        return self._hash

    def __str__(self):
        from .dsl import format_expr

        return format_expr(self)

    def __repr__(self):
        return f"Expr({self})"

    # ------------------------------------------------------------- calculus
    def diff(self, s: Symbol) -> "Expr":
        """Formal derivative with respect to ``s``, word order preserved."""
        pairs = []
        for (central, h, word), c in self._terms.items():
            if s.central:
                for t, e in central:
                    if t == s:
                        rest = tuple((u, f) for u, f in central if u != s)
                        if e != 1:
                            rest = _merge_central(rest, ((s, e - 1),))
                        pairs.append(((rest, h, word), c * Coeff(e)))
                continue
            for j, t in enumerate(word):
                if t == s:
                    pairs.append(((central, h, word[:j] + word[j + 1:]), c))
        return Expr._raw(_collect(pairs))

    def subs(self, mapping: Mapping[Symbol, "Expr"]) -> "Expr":
        """Replace symbols by expressions, keeping factor order."""
        mapping = {k: Expr.lift(v) for k, v in mapping.items()}
        out = Expr.zero()
        for (central, h, word), c in self._terms.items():
            term = Expr._raw({((), h, ()): c})
            for s, e in central:
                term = term * (mapping[s] ** e if s in mapping else Expr._raw({(((s, e),), 0, ()): ONE}))
            for s in word:
                term = term * mapping.get(s, Expr.sym(s))
            out = out + term
        return out


def as_expr(x) -> Expr:
    return Expr.lift(x)


# --------------------------------------------------------------------------
# normal ordering
# --------------------------------------------------------------------------


def _sorted_times_symbol(table, word: tuple, s: Symbol) -> dict:
    """Normal-order ``word * s`` for an already sorted ``word``.

    Returns ``{(central, hbar, sorted_word): coeff}``.
    """
    cache = table._word_cache
    key = (word, s)
    hit = cache.get(key)
    if hit is not None:
        return hit
    if not word or word[-1] <= s:
        result = {((), 0, word + (s,)): ONE}
    else:
        a = word[-1]
        head = word[:-1]
        # head a s = head s a + head [a, s]
        pairs = [((c, h, w + (a,)), v) for (c, h, w), v in _sorted_times_symbol(table, head, s).items()]
        comm = table.commutator_value(a, s)
        for (c, h, _), v in comm.items():
            pairs.append(((c, h, head), v))
        result = _collect(pairs)
    cache[key] = result
    return result


def _order_word(table, word: tuple) -> dict:
    cache = table._nf_cache
    hit = cache.get(word)
    if hit is not None:
        return hit
    if len(word) <= 1 or all(word[j] <= word[j + 1] for j in range(len(word) - 1)):
        result = {((), 0, word): ONE}
    else:
        pairs = []
        for (c, h, w), v in _order_word(table, word[:-1]).items():
            for (c2, h2, w2), v2 in _sorted_times_symbol(table, w, word[-1]).items():
                pairs.append(((_merge_central(c, c2), h + h2, w2), v * v2))
        result = _collect(pairs)
    cache[word] = result
    return result


def normal_form(e: Expr, table) -> Expr:
    """Canonical form of ``e`` under the commutation relations in ``table``.

    Every word is sorted by the global symbol ordering; each swap of an
    out-of-order pair inserts the pair's commutator.  Idempotent.
    """
    table.check_covers(e.operator_symbols())
    pairs = []
    for (central, h, word), c in e.items():
        for (c2, h2, w2), v in _order_word(table, word).items():
            pairs.append(((_merge_central(central, c2), h + h2, w2), c * v))
    return Expr._raw(_collect(pairs))


# --------------------------------------------------------------------------
# underline (commutative projection) and hbar filtering
# --------------------------------------------------------------------------


def _commutify_word(word: tuple, dofs) -> tuple:
    if len(word) < 2:
        return word
    groups: dict[int, list] = {}
    for s in word:
        groups.setdefault(s.index, []).append(s)
    out: list = []
    for index in sorted(groups):
        seq = groups[index]
        if dofs is not None and index not in dofs:
            out.extend(seq)
            continue
        # original q, p of this DOF commute; tilde symbols are barriers
        run: list = []
        for s in seq:
            if s.kind in ORIGINAL_KINDS:
                run.append(s)
            else:
                out.extend(sorted(run))
                run = []
                out.append(s)
        out.extend(sorted(run))
    return tuple(out)


def underline(e: Expr, dofs=None) -> Expr:
    """Evaluate the retained tree of ``e`` with ``q`` and ``p`` commuting.

    ``dofs`` restricts the commutation to those DOF indices (``None`` means
    every DOF).  Symbols of different DOFs always commute in the theories
    built here, so they are grouped by DOF index; a tilde symbol blocks
    reordering of its own DOF's ``q``/``p`` across it.
    """
    dofs = None if dofs is None else frozenset(dofs)
    return Expr._raw(_collect(((c, h, _commutify_word(w, dofs)), v) for (c, h, w), v in e.items()))


def commutative_product(a: Expr, b: Expr) -> Expr:
    return underline(a * b)


def hbar_term(e: Expr, k: int) -> Expr:
    """Monomials carrying exactly ``hbar**k``, with the power stripped."""
    if k < 0:
        raise ValueError("k must be non-negative")
    return Expr._raw({(c, 0, w): v for (c, h, w), v in e.items() if h == k})


def sum_exprs(items: Iterable[Expr]) -> Expr:
    pairs = []
    for e in items:
        pairs.extend(e.items())
    return Expr._raw(_collect(pairs))
