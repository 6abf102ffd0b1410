"""Matrix-free grid actions for the operator symbols of a theory.

Position-like symbols multiply by an axis coordinate.  Derivative symbols
act spectrally: ``p~ = -i hbar d/dq`` and ``q~ = +i hbar d/dp`` on a
deconjugated DOF with axes ``(q, p)``, ``p = -i hbar d/dq`` on a canonical
DOF with the single axis ``q``.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import scipy.fft as sfft

from ..algebra import Expr, Kind, Symbol, normal_form
from ..deconjugation import TheoryError, TildeTheory
from .grid import PhaseGrid

THREADS_ENV = "KVNLAB_THREADS"


class RepresentationError(TheoryError):
    pass


def fft_workers() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise RepresentationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


@dataclass(frozen=True)
class SymbolAction:
    kind: str  # "diag" or "deriv"
    axis: int
    prefactor: complex = 1.0  # deriv: symbol = prefactor * d/d(axis)

    def __str__(self):
        if self.kind == "diag":
            return f"multiply by axis {self.axis}"
        return f"{self.prefactor:+g} d/dx_{self.axis}"


class OperatorRep:
    """Actions of every operator symbol of ``theory`` on ``grid``."""

    def __init__(self, theory: TildeTheory, grid: PhaseGrid, actions: Mapping[Symbol, SymbolAction],
                 hbar: float = 1.0, params: Mapping[str, float] | None = None, workers: int | None = None):
        self.theory = theory
        self.grid = grid
        self.actions = dict(actions)
        self.hbar = float(hbar)
        self.params = dict(params or {})
        self.workers = fft_workers() if workers is None else workers
        self._coords = [grid.coordinate(a.name) for a in grid.axes]
        self._k = [grid.wavenumber(a.name) for a in grid.axes]
        self._cache: dict = {}

    def with_params(self, **params) -> "OperatorRep":
        merged = dict(self.params)
        merged.update(params)
        return OperatorRep(self.theory, self.grid, self.actions, self.hbar, merged, self.workers)

    # ------------------------------------------------------------ scalars
    def coefficient(self, central: tuple, h: int, c) -> complex:
        value = complex(c) * self.hbar ** h
        for s, e in central:
            if s.kind is not Kind.PARAMETER:
                raise RepresentationError(f"{s} cannot be represented on a grid")
            if self.params.get(s.name) is None:
                raise RepresentationError(f"no numeric value for parameter {s.name}")
            value *= float(self.params[s.name]) ** e
        return value

    def diag_array(self, factors) -> np.ndarray | None:
        out = None
        for s in factors:
            x = self._coords[self.actions[s].axis]
            out = x if out is None else out * x
        return out

    # ------------------------------------------------------------ compile
    def compile(self, expr) -> "CompiledOperator":
        expr = Expr.lift(expr)
        hit = self._cache.get(expr)
        if hit is not None:
            return hit
        missing = [s for s in expr.operator_symbols() if s not in self.actions]
        if missing:
            raise RepresentationError(f"symbols {sorted(map(str, missing))} have no grid action")
        nf = normal_form(expr, self.theory.table)
        op = CompiledOperator(self, nf)
        self._cache[expr] = op
        return op

    def apply(self, expr, psi: np.ndarray) -> np.ndarray:
        return self.compile(expr).apply(psi)

    def expectation(self, state, expr) -> complex:
        psi = state.psi if hasattr(state, "psi") else state
        return self.compile(expr).expectation(psi)


def _split_word(word: tuple, actions) -> tuple | None:
    """``word`` as ``L * D * R``: diagonal factors left and right of the derivatives.

    A diagonal factor moves left when every derivative on its axis sits to
    its right, and right in the mirror case; derivatives on other axes and
    other diagonals commute with it.  Returns ``None`` when a diagonal is
    trapped between derivatives on its own axis.
    """
    deriv_pos: dict = {}
    orders: dict = {}
    for j, s in enumerate(word):
        act = actions[s]
        if act.kind == "deriv":
            deriv_pos.setdefault(act.axis, []).append(j)
            key = (act.axis, act.prefactor.real, act.prefactor.imag)
            orders[key] = orders.get(key, 0) + 1
    left, right = [], []
    for j, s in enumerate(word):
        act = actions[s]
        if act.kind == "deriv":
            continue
        pos = deriv_pos.get(act.axis, ())
        if all(k > j for k in pos):
            left.append(s)
        elif all(k < j for k in pos):
            right.append(s)
        else:
            return None
    return tuple(left), tuple(sorted(orders.items())), tuple(right)


class CompiledOperator:
    """A normal-ordered polynomial grouped by derivative structure.

    Terms sharing derivative orders and right factor ``R`` share one FFT pair:
    ``sum_t L_t D (R psi)``; all derivative-free terms fold into one diagonal.
    """

    def __init__(self, rep: OperatorRep, nf: Expr):
        self.rep = rep
        self.expr = nf
        grid = rep.grid
        diag = np.zeros(grid.shape, dtype=complex)
        has_diag = False
        groups: dict = {}
        fallback = []
        for (central, h, word), c in nf.items():
            coef = rep.coefficient(central, h, c)
            split = _split_word(word, rep.actions)
            if split is None:
                fallback.append((coef, word))
                continue
            left, orders, right = split
            L = rep.diag_array(left)
            term = coef if L is None else coef * L
            if not orders:
                Rv = rep.diag_array(right)
                diag = diag + (term if Rv is None else term * Rv)
                has_diag = True
                continue
            key = (orders, right)
            acc = groups.get(key)
            groups[key] = term if acc is None else acc + term
        self.diag = np.broadcast_to(diag, grid.shape).copy() if has_diag else None
        self.groups = []
        for (orders, right), L in groups.items():
            axes = tuple(sorted({ax for (ax, _, _), _ in orders}))
            mult = 1.0
            for (ax, re_, im), n in orders:
                mult = mult * (complex(re_, im) * 1j * rep._k[ax]) ** n
            R = rep.diag_array(right)
            L = np.asarray(L)
            if L.ndim == 0:
                L = complex(L)
            self.groups.append((axes, mult, R, L))
        self.fallback = fallback

    @property
    def fft_pairs(self) -> int:
        return len(self.groups)

    def _deriv(self, psi, axes, mult, scratch: bool = False):
        # ``scratch``: psi is a temporary and may be overwritten
        w = self.rep.workers
        f = sfft.fftn(psi, axes=axes, workers=w, overwrite_x=scratch)
        f *= mult
        return sfft.ifftn(f, axes=axes, workers=w, overwrite_x=True)

    def apply(self, psi: np.ndarray) -> np.ndarray:
        psi = np.asarray(psi, dtype=complex)
        out = self.diag * psi if self.diag is not None else np.zeros_like(psi)
        for axes, mult, R, L in self.groups:
            tmp = self._deriv(psi if R is None else R * psi, axes, mult, scratch=R is not None)
            if np.isscalar(L):
                if L != 1:
                    tmp *= L
            else:
                tmp *= L
            out += tmp
        for coef, word in self.fallback:
            out += coef * self._word(psi, word)
        return out

    def _word(self, psi, word):
        for s in reversed(word):
            act = self.rep.actions[s]
            if act.kind == "diag":
                psi = self.rep._coords[act.axis] * psi
            else:
                psi = self._deriv(psi, (act.axis,), act.prefactor * 1j * self.rep._k[act.axis])
        return psi

    __call__ = apply

    def expectation(self, psi: np.ndarray) -> complex:
        """``<psi| O psi>`` by quadrature; scalar-``L`` groups use Parseval (one FFT)."""
        psi = np.asarray(psi, dtype=complex)
        grid = self.rep.grid
        total = 0j
        if self.diag is not None:
            total += np.vdot(psi, self.diag * psi)
        w = self.rep.workers
        for axes, mult, R, L in self.groups:
            if not np.isscalar(L) or self.fallback:
                total += np.vdot(psi, L * self._deriv(psi if R is None else R * psi, axes, mult))
                continue
            a = sfft.fftn(psi, axes=axes, workers=w)
            b = a if R is None else sfft.fftn(R * psi, axes=axes, workers=w)
            n = int(np.prod([psi.shape[ax] for ax in axes]))
            total += L * np.vdot(a, mult * b) / n
        for coef, word in self.fallback:
            total += np.vdot(psi, coef * self._word(psi, word))
        return complex(total) * grid.cell_volume


def build_representation(theory: TildeTheory, grid: PhaseGrid, hbar: float = 1.0,
                         params: Mapping[str, float] | None = None, workers: int | None = None) -> OperatorRep:
    """Grid actions for ``theory``; axes must be ``(q_i, p_i)`` per deconjugated
    DOF and ``q_j`` per canonical DOF, named after the symbols."""
    expected = []
    for i in range(1, theory.n + 1):
        expected.append(theory.q(i).name)
        if i in theory.subset:
            expected.append(theory.p(i).name)
    if sorted(expected) != sorted(grid.names):
        raise RepresentationError(f"grid axes {list(grid.names)} do not match the theory (need {expected})")
    ih = 1j * hbar
    actions = {}
    for i in range(1, theory.n + 1):
        q, p = theory.q(i), theory.p(i)
        kq = grid.axis_index(q.name)
        actions[q] = SymbolAction("diag", kq)
        if i in theory.subset:
            kp = grid.axis_index(p.name)
            actions[p] = SymbolAction("diag", kp)
            actions[theory.pt(i)] = SymbolAction("deriv", kq, -ih)
            actions[theory.qt(i)] = SymbolAction("deriv", kp, ih)
        else:
            actions[p] = SymbolAction("deriv", kq, -ih)
    return OperatorRep(theory, grid, actions, hbar, params, workers)


def commutator_residual(rep: OperatorRep, a: Symbol, b: Symbol, psi: np.ndarray) -> float:
    """``||([a,b] - c) psi|| / ||psi||`` with ``c`` the table's central value."""
    A, B = Expr.sym(a), Expr.sym(b)
    lhs = rep.apply(A, rep.apply(B, psi)) - rep.apply(B, rep.apply(A, psi))
    value = Expr._raw(dict(rep.theory.table.commutator_value(a, b)))
    c = 0j
    for (central, h, _), coef in value.items():
        c += rep.coefficient(central, h, coef)
    diff = lhs - c * psi
    return float(np.linalg.norm(diff) / np.linalg.norm(psi))
