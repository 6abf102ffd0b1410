"""Deconjugated (KvN) theories built from canonical ones."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .algebra import AlgebraError, Coeff, Expr, Kind, Symbol, normal_form, sum_exprs, underline
from .brackets import RelationTable, canonical_table, dbracket, partial
from .dsl import RESERVED


class TheoryError(AlgebraError):
    pass


class LegendreError(TheoryError):
    pass


def _default_names(n: int) -> list[tuple[str, str]]:
    if n == 1:
        return [("q", "p")]
    return [(f"q_{i}", f"p_{i}") for i in range(1, n + 1)]


def tilde_name(name: str) -> str:
    return name + "~"


def velocity_name(name: str) -> str:
    return "d_" + name


@dataclass(frozen=True)
class TildeTheory:
    """Which DOFs are deconjugated, with their symbols and relation tables.

    ``table`` holds the deconjugated relations for DOFs in ``subset`` and the
    canonical ones elsewhere; ``canonical`` is the original fully canonical
    table over the same ``q``/``p`` symbols.
    """

    n: int
    subset: frozenset
    positions: tuple
    momenta: tuple
    tilde_positions: dict
    tilde_momenta: dict
    table: RelationTable = field(repr=False)
    canonical: RelationTable = field(repr=False)
    parameters: dict = field(default_factory=dict, repr=False)

    @property
    def is_full(self) -> bool:
        return len(self.subset) == self.n

    @property
    def is_partial(self) -> bool:
        return 0 < len(self.subset) < self.n

    def q(self, i: int) -> Symbol:
        return self.positions[i - 1]

    def p(self, i: int) -> Symbol:
        return self.momenta[i - 1]

    def qt(self, i: int) -> Symbol:
        return self.tilde_positions[i]

    def pt(self, i: int) -> Symbol:
        return self.tilde_momenta[i]

    def originals(self, dofs=None) -> list[Symbol]:
        idx = range(1, self.n + 1) if dofs is None else sorted(dofs)
        return [s for i in idx for s in (self.q(i), self.p(i))]

    def all_symbols(self) -> list[Symbol]:
        out = []
        for i in range(1, self.n + 1):
            out.append(self.q(i))
            if i in self.subset:
                out.extend([self.pt(i), self.qt(i)])
            out.append(self.p(i))
        return out

    def velocities(self) -> dict:
        out = {}
        for i in self.subset:
            q, qt = self.q(i), self.qt(i)
            out[q] = Symbol(velocity_name(q.name), Kind.VELOCITY, i)
            out[qt] = Symbol(velocity_name(qt.name), Kind.TILDE_VELOCITY, i)
        return out

    def with_parameters(self, *names: str) -> "TildeTheory":
        params = dict(self.parameters)
        for n in names:
            if n in RESERVED:
                raise TheoryError(f"{n!r} is reserved")
            params[n] = Symbol(n, Kind.PARAMETER, 0)
        return TildeTheory(self.n, self.subset, self.positions, self.momenta, self.tilde_positions,
                           self.tilde_momenta, self.table, self.canonical, params)

    def namespace(self, *params: str) -> dict:
        ns = {s.name: s for s in self.all_symbols()}
        ns.update({s.name: s for s in self.velocities().values()})
        ns.update(self.parameters)
        for n in params:
            ns[n] = Symbol(n, Kind.PARAMETER, 0)
        return ns

    def parse(self, text: str) -> Expr:
        from .dsl import parse_expr

        return parse_expr(text, self.namespace())


def build_theory(n: int, subset=(), names=None, parameters=()) -> TildeTheory:
    """Theory with DOFs ``1..n``, deconjugating those listed in ``subset``.

    For ``i`` in ``subset``: ``[[q_i, p~_i]] = [[q~_i, p_i]] = 1`` and
    ``[[q_i, p_i]] = [[q~_i, p~_i]] = 0``; other DOFs keep ``[[q_i, p_i]] = 1``.
    Every cross-DOF bracket vanishes.
    """
    if n < 1:
        raise TheoryError("need at least one degree of freedom")
    subset = frozenset(subset)
    bad = [i for i in subset if not 1 <= i <= n]
    if bad:
        raise TheoryError(f"DOF index out of range: {sorted(bad)}")
    names = list(names) if names is not None else _default_names(n)
    if len(names) != n:
        raise TheoryError("one (q, p) name pair per DOF is required")
    positions, momenta, qts, pts = [], [], {}, {}
    for i, (qn, pn) in enumerate(names, start=1):
        positions.append(Symbol(qn, Kind.POSITION, i))
        momenta.append(Symbol(pn, Kind.MOMENTUM, i))
        if i in subset:
            qts[i] = Symbol(tilde_name(qn), Kind.TILDE_POSITION, i)
            pts[i] = Symbol(tilde_name(pn), Kind.TILDE_MOMENTUM, i)
    seen = [s.name for s in positions + momenta + list(qts.values()) + list(pts.values())]
    if len(set(seen)) != len(seen) or RESERVED & set(seen):
        raise TheoryError(f"duplicate or reserved symbol names: {seen}")

    rel = {}
    for i in range(1, n + 1):
        q, p = positions[i - 1], momenta[i - 1]
        if i in subset:
            rel[(q, pts[i])] = 1
            rel[(qts[i], p)] = 1
        else:
            rel[(q, p)] = 1
    symbols = positions + momenta + list(qts.values()) + list(pts.values())
    table = RelationTable.from_dbrackets(symbols, rel)
    canon = canonical_table(zip(positions, momenta))
    theory = TildeTheory(n, subset, tuple(positions), tuple(momenta), qts, pts, table, canon)
    return theory.with_parameters(*parameters) if parameters else theory


def _check_alpha(alpha: Expr, theory: TildeTheory) -> Expr:
    alpha = Expr.lift(alpha)
    allowed = set(theory.originals(theory.subset))
    stray = [s for s in alpha.operator_symbols() if s not in allowed]
    if stray:
        raise TheoryError(f"alpha may depend only on deconjugated q, p; found {sorted(map(str, stray))}")
    return alpha


def _image_terms(u: Expr, theory: TildeTheory) -> list[Expr]:
    S = theory.subset
    canon = theory.canonical
    out = []
    for i in sorted(S):
        d_p = underline(partial(u, theory.p(i), canon), S)
        d_q = underline(partial(u, theory.q(i), canon), S)
        out.append(Expr.sym(theory.pt(i)) * d_p)
        out.append(d_q * Expr.sym(theory.qt(i)))
    return out


def tilde_image(u, theory: TildeTheory, alpha=0) -> Expr:
    """``u~ = p~ * _d_p u_ + _d_q u_ * q~ + _alpha_``, summed over deconjugated DOFs.

    Underlines commute only the deconjugated DOFs' ``q`` and ``p``.  The
    product ordering is kept as written (``p~`` left, ``q~`` right).
    """
    u = Expr.lift(u)
    allowed = set(theory.originals(theory.subset))
    stray = [s for s in u.operator_symbols() if s not in allowed]
    if stray:
        raise TheoryError(f"tilde_image: {sorted(map(str, stray))} are not original variables of deconjugated DOFs")
    alpha = _check_alpha(alpha, theory)
    if not alpha.is_zero():
        nf = normal_form(u, theory.canonical)
        for s in allowed:
            if nf == Expr.sym(s):
                raise TheoryError(f"alpha must vanish for the fundamental variable {s}")
    return sum_exprs(_image_terms(u, theory) + [underline(alpha, theory.subset)])


def _is_classical_kinetic(word: tuple, subset) -> bool:
    return bool(word) and all(s.kind is Kind.MOMENTUM and s.index in subset for s in word)


def tilde_hamiltonian(H, theory: TildeTheory, alpha=0, *, literal_underline: bool = False) -> Expr:
    """Tilde-Hamiltonian of ``H``.

    Full deconjugation gives the sum of per-DOF image terms plus ``alpha``.
    For a partial subset the underlined ``H`` is added so the canonical
    sector keeps its dynamics.  By default, terms of ``H`` built only from
    the deconjugated momenta (the classical kinetic energy) are left out of
    that underlined copy; they only shift ``alpha`` and carry no dynamics for
    the canonical sector.  ``literal_underline=True`` keeps all of ``H``.
    With no deconjugated DOF the result is ``H`` itself.
    """
    H = Expr.lift(H)
    theory.canonical.check_covers(H.operator_symbols())
    alpha = _check_alpha(alpha, theory)
    S = theory.subset
    if not S:
        return H + alpha
    parts = _image_terms(H, theory)
    if theory.is_partial:
        if literal_underline:
            rest = H
        else:
            rest = Expr._raw({k: c for k, c in H.items() if not _is_classical_kinetic(k[2], S)})
        parts.append(underline(rest, S))
    parts.append(underline(alpha, S))
    return sum_exprs(parts)


def _to_sympy(e: Expr, symmap: dict):
    import sympy

    out = sympy.Integer(0)
    hbar = sympy.Symbol("hbar")
    for (central, h, word), c in e.items():
        term = sympy.Rational(c.re.numerator, c.re.denominator) + sympy.I * sympy.Rational(c.im.numerator, c.im.denominator)
        term *= hbar ** h
        for s, k in central:
            term *= symmap[s] ** k
        for s in word:
            term *= symmap[s]
        out += term
    return out


def _from_sympy(expr, back: dict) -> Expr:
    import sympy

    expr = sympy.expand(expr)
    out = Expr.zero()
    hbar = sympy.Symbol("hbar")
    for mono, coeff in expr.as_coefficients_dict().items():
        factors = Expr.const(1)
        c = coeff
        powers = mono.as_powers_dict() if mono != 1 else {}
        for base, e in powers.items():
            if base.is_number:
                c = c * base ** e
                continue
            if not e.is_Integer:
                raise LegendreError(f"non-polynomial term {mono}")
            e = int(e)
            if base == hbar:
                if e < 0:
                    raise LegendreError("negative power of hbar")
                factors = factors * Expr.hbar(e)
                continue
            sym = back.get(base)
            if sym is None:
                raise LegendreError(f"cannot represent factor {base}")
            if e < 0 and sym.kind is not Kind.PARAMETER:
                raise LegendreError(f"Legendre transform unavailable: non-polynomial in {sym}")
            factors = factors * (Expr.sym(sym) ** e)
        re_, im_ = sympy.re(c), sympy.im(c)
        if not (re_.is_Rational and im_.is_Rational):
            raise LegendreError(f"Legendre transform unavailable: non-rational coefficient {c}")
        out = out + factors * Coeff(Fraction(int(re_.p), int(re_.q)), Fraction(int(im_.p), int(im_.q)))
    return out


def tilde_lagrangian(H_tilde, theory: TildeTheory) -> Expr:
    """Legendre transform ``L~ = sum(p~ dq + p dq~) - H~``.

    Velocities come from the tilde brackets ``dq = [[q, H~]]~`` and
    ``dq~ = [[q~, H~]]~``; they must be linear and invertible in ``p`` and
    ``p~`` respectively.  All variables are treated as commuting numbers.
    The result is expressed in ``q, q~`` and the velocity symbols
    ``d_q, d_q~``.
    """
    import sympy

    if not theory.is_full:
        raise TheoryError("tilde_lagrangian needs every DOF deconjugated")
    H_tilde = Expr.lift(H_tilde)
    table = theory.table
    vel = theory.velocities()
    symmap = {}
    for s in theory.all_symbols() + list(vel.values()) + list(theory.parameters.values()) + list(H_tilde.symbols()):
        if s not in symmap:
            symmap[s] = sympy.Dummy(s.name)
    params = {v for k, v in symmap.items() if k.kind is Kind.PARAMETER}
    back = {v: k for k, v in symmap.items()}

    idx = sorted(theory.subset)
    qdot_eqs, qtdot_eqs = [], []
    for i in idx:
        qd = dbracket(Expr.sym(theory.q(i)), H_tilde, table)
        qtd = dbracket(Expr.sym(theory.qt(i)), H_tilde, table)
        qdot_eqs.append(sympy.Eq(symmap[vel[theory.q(i)]], _to_sympy(qd, symmap)))
        qtdot_eqs.append(sympy.Eq(symmap[vel[theory.qt(i)]], _to_sympy(qtd, symmap)))
    ps = [symmap[theory.p(i)] for i in idx]
    pts = [symmap[theory.pt(i)] for i in idx]

    sol_p = _solve_linear(qdot_eqs, ps)
    qtdot_sub = [sympy.Eq(e.lhs, e.rhs.subs(sol_p)) for e in qtdot_eqs]
    sol_pt = _solve_linear(qtdot_sub, pts)
    subs = dict(sol_p)
    subs.update({k: v.subs(sol_p) for k, v in sol_pt.items()})

    L = sum(symmap[theory.pt(i)] * symmap[vel[theory.q(i)]] + symmap[theory.p(i)] * symmap[vel[theory.qt(i)]] for i in idx)
    L = L - _to_sympy(H_tilde, symmap)
    L = sympy.expand(L.subs(subs, simultaneous=True))
    L = sympy.cancel(L)
    num, den = sympy.fraction(L)
    if den.free_symbols - params:
        raise LegendreError("Legendre transform unavailable: result is not polynomial")
    return _from_sympy(L, back)


def _solve_linear(eqs, unknowns) -> dict:
    import sympy

    try:
        A, b = sympy.linear_eq_to_matrix([e.lhs - e.rhs for e in eqs], unknowns)
    except sympy.polys.polyerrors.PolyNonlinearError:
        raise LegendreError("Legendre transform unavailable: velocity map is not linear in the momenta") from None
    if sympy.simplify(A.det()) == 0:
        raise LegendreError("Legendre transform unavailable: velocity map is not invertible")
    x = A.LUsolve(b)
    return {u: sympy.simplify(v) for u, v in zip(unknowns, x)}
