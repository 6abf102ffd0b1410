"""Heisenberg equations of motion and what they say about the theory."""
from __future__ import annotations

from dataclasses import dataclass, field

from .algebra import Expr, Kind, Symbol, normal_form, sum_exprs, underline
from .brackets import RelationTable, dbracket, partial
from .deconjugation import TheoryError, TildeTheory, tilde_hamiltonian


class DecouplingError(TheoryError):
    pass


@dataclass(frozen=True)
class EquationOfMotion:
    """``d/dt var = rhs`` in the Heisenberg picture (no explicit time dependence)."""

    var: Symbol
    rhs: Expr
    picture: str = "heisenberg"

    def __str__(self):
        return f"d/dt {self.var} = {self.rhs}"


def eom(var, H, table: RelationTable) -> EquationOfMotion:
    if isinstance(var, Expr):
        syms = list(var.operator_symbols())
        if len(var) != 1 or len(syms) != 1:
            raise TheoryError("eom expects a single symbol")
        var = syms[0]
    return EquationOfMotion(var, dbracket(Expr.sym(var), H, table))


def all_eoms(H_tilde, theory: TildeTheory) -> list[EquationOfMotion]:
    return [eom(s, H_tilde, theory.table) for s in theory.all_symbols()]


def dynamical_momentum(H, dof: int, table: RelationTable, theory: TildeTheory | None = None) -> Expr:
    """Right-hand side of ``dq/dt = [[q, H]]`` for DOF ``dof``.

    Whichever momenta show up here act as the dynamical momentum of ``q``,
    regardless of which symbol is its canonical conjugate.
    """
    if theory is not None:
        q = theory.q(dof)
    else:
        matches = [s for s in table.symbols if s.kind is Kind.POSITION and s.index == dof]
        if not matches:
            raise TheoryError(f"no position for DOF {dof}")
        q = matches[0]
    return eom(q, H, table).rhs


@dataclass(frozen=True)
class ConservationReport:
    canonical_conserved: bool
    tilde_conserved: bool

    @property
    def converse_witness(self) -> bool:
        """True when ``u`` is conserved only after deconjugation."""
        return self.tilde_conserved and not self.canonical_conserved


def conserved_check(u, H, theory: TildeTheory, alpha=0) -> ConservationReport:
    """Whether ``u`` is conserved under ``H`` and under its tilde-Hamiltonian.

    For a fully deconjugated theory canonical conservation must carry over;
    a violation raises ``RuntimeError`` since it contradicts the bracket
    expansion argument (it can only happen for hbar-explicit input).
    """
    u, H = Expr.lift(u), Expr.lift(H)
    if not (u.is_hbar_free() and H.is_hbar_free()):
        raise TheoryError("conserved_check needs hbar-free u and H")
    canon = dbracket(u, H, theory.canonical).is_zero()
    H_tilde = tilde_hamiltonian(H, theory, alpha)
    tilde = dbracket(u, H_tilde, theory.table).is_zero()
    if theory.is_full and canon and not tilde:
        raise RuntimeError(f"conservation of {u} did not propagate to the deconjugated theory")
    return ConservationReport(canon, tilde)


@dataclass
class VariableExtra:
    total: Expr
    tilde_free: Expr
    tilde_terms: dict = field(default_factory=dict)

    @property
    def extra(self) -> Expr:
        return sum_exprs(self.tilde_terms.values())


@dataclass
class ExtraTermReport:
    """Per canonical-sector variable: rhs split into tilde-free and tilde parts."""

    entries: dict

    def __getitem__(self, var) -> VariableExtra:
        if isinstance(var, str):
            for s, v in self.entries.items():
                if s.name == var:
                    return v
            raise KeyError(var)
        return self.entries[var]

    def lines(self) -> list[str]:
        out = []
        for s, v in self.entries.items():
            out.append(f"d/dt {s} = {v.total}")
            out.append(f"  tilde-free: {v.tilde_free}")
            for t, term in v.tilde_terms.items():
                out.append(f"  ~ {t}: {term}")
        return out


def extra_terms(H, theory: TildeTheory, alpha=0) -> ExtraTermReport:
    """Decompose the canonical sector's tilde equations of motion.

    Each rhs becomes ``[[x, _H_]]`` plus ``p~_i [[x, _d_{p_i} H_]]`` and
    ``[[x, _d_{q_i} H_]] q~_i`` for the deconjugated DOFs ``i``; the parts
    are checked to add up to the full bracket.
    """
    if not theory.is_partial:
        raise TheoryError("no mixed sector: extra terms need a proper partial deconjugation")
    H = Expr.lift(H)
    S = theory.subset
    H_tilde = tilde_hamiltonian(H, theory, alpha)
    base = sum_exprs([H_tilde] + [-t for t in _tilde_pieces(H, theory)]) - underline(Expr.lift(alpha), S)
    entries = {}
    table = theory.table
    for j in range(1, theory.n + 1):
        if j in S:
            continue
        for x in (theory.q(j), theory.p(j)):
            X = Expr.sym(x)
            total = dbracket(X, H_tilde, table)
            free = dbracket(X, base, table)
            tilde_terms = {}
            for i in sorted(S):
                d_p = underline(partial(H, theory.p(i), theory.canonical), S)
                d_q = underline(partial(H, theory.q(i), theory.canonical), S)
                tilde_terms[theory.pt(i)] = normal_form(Expr.sym(theory.pt(i)) * dbracket(X, d_p, table), table)
                tilde_terms[theory.qt(i)] = normal_form(dbracket(X, d_q, table) * Expr.sym(theory.qt(i)), table)
            entry = VariableExtra(total, free, tilde_terms)
            if normal_form(entry.tilde_free + entry.extra, table) != total:
                raise RuntimeError(f"extra-term decomposition of d/dt {x} does not reconstruct the rhs")
            entries[x] = entry
    return ExtraTermReport(entries)


def _tilde_pieces(H: Expr, theory: TildeTheory) -> list[Expr]:
    S = theory.subset
    out = []
    for i in sorted(S):
        out.append(Expr.sym(theory.pt(i)) * underline(partial(H, theory.p(i), theory.canonical), S))
        out.append(underline(partial(H, theory.q(i), theory.canonical), S) * Expr.sym(theory.qt(i)))
    return out


@dataclass(frozen=True)
class Decoupling:
    alpha: Expr
    mass: Expr
    H_tilde: Expr
    qt_dot: Expr
    pt_dot: Expr
    qt_ddot: Expr
    coefficient: Expr  # qt_ddot == coefficient * q~

    def lines(self, dof_name: str) -> list[str]:
        return [
            f"alpha = {self.alpha}",
            f"d/dt {dof_name}~ = {self.qt_dot}",
            f"d2/dt2 {dof_name}~ = {self.qt_ddot}",
        ]


def alpha_decoupling(H, theory: TildeTheory) -> Decoupling:
    """Pick ``alpha = -p_s^2/(2 m_s)`` and certify ``q~_s`` obeys a homogeneous equation.

    ``H`` must read ``p_s^2/(2 m_s) + (canonical sector) + V(q_s, positions)``
    for the single deconjugated DOF ``s``.  The second-order equation is
    obtained by bracketing ``[[q~_s, H~]]`` with ``H~`` once more and
    compared against ``-(1/m_s) d^2_{q_s} V q~_s``.
    """
    if len(theory.subset) != 1 or not theory.is_partial:
        raise DecouplingError("decoupling unavailable: needs exactly one deconjugated DOF next to canonical ones")
    (s,) = theory.subset
    H = normal_form(Expr.lift(H), theory.canonical)
    qs, ps = theory.q(s), theory.p(s)
    kinetic = []
    for (central, h, word), c in H.items():
        if h:
            raise DecouplingError("decoupling unavailable: H contains hbar explicitly")
        touches = [t for t in word if t.index == s]
        if not touches:
            continue
        if ps in word:
            if word != (ps, ps):
                raise DecouplingError(f"decoupling unavailable: term {Expr._raw({(central, h, word): c})} couples p_{s} to other variables")
            kinetic.append(Expr._raw({(central, 0, ()): c}))
            continue
        if any(t.kind is Kind.MOMENTUM for t in word):
            raise DecouplingError(
                f"decoupling unavailable: potential term {Expr._raw({(central, h, word): c})} depends on a momentum"
            )
    if len(kinetic) != 1:
        raise DecouplingError(f"decoupling unavailable: kinetic term of DOF {s} is not p^2/(2m)")
    half_inv_mass = kinetic[0]
    mass = (half_inv_mass * 2).inverse()
    alpha = -half_inv_mass * Expr.sym(ps) * Expr.sym(ps)

    H_tilde = tilde_hamiltonian(H, theory, alpha)
    table = theory.table
    qt, pt = theory.qt(s), theory.pt(s)
    qt_dot = dbracket(Expr.sym(qt), H_tilde, table)
    pt_dot = dbracket(Expr.sym(pt), H_tilde, table)
    qt_ddot = dbracket(qt_dot, H_tilde, table)

    d2V = underline(partial(partial(H, qs, theory.canonical), qs, theory.canonical), theory.subset)
    coefficient = normal_form(-(d2V / mass), table)
    expected = normal_form(coefficient * Expr.sym(qt), table)
    if qt_ddot != expected:
        raise DecouplingError(f"decoupling unavailable: d2/dt2 {qt} = {qt_ddot} is not {expected}")
    return Decoupling(alpha, mass, H_tilde, qt_dot, pt_dot, qt_ddot, coefficient)
