"""Partially deconjugated (classical + quantum) runs and their factorized reference."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..algebra import ONE, Expr, Kind, normal_form
from ..brackets import dbracket, partial
from ..deconjugation import TildeTheory, build_theory, tilde_hamiltonian
from ..dynamics import Decoupling, alpha_decoupling
from .evolve import InstabilityError, TrajectoryRecord, evolve, spectral_radius_estimate
from .grid import GaussianSpec, GridError, PhaseGrid, StateVector, gaussian_state
from .operators import OperatorRep, SymbolAction, build_representation


@dataclass
class HybridResult:
    tilde: TrajectoryRecord
    reference: TrajectoryRecord | None
    state: StateVector
    H_tilde: Expr
    decoupling: Decoupling
    phase: dict = field(default_factory=dict)

    def deviation(self, name: str) -> float:
        """``max_t |<x>_tilde - <x>_reference|`` for a shared column."""
        if self.reference is None:
            raise ValueError("run was made without the reference")
        return float(np.max(np.abs(self.tilde[name] - self.reference[name])))


def _sectors(theory: TildeTheory):
    if len(theory.subset) != 1 or not theory.is_partial:
        raise GridError("hybrid runs need exactly one deconjugated DOF next to canonical ones")
    (s,) = theory.subset
    canon = [j for j in range(1, theory.n + 1) if j != s]
    return s, canon


def _tilde_rate(rep, theory, H_tilde, s):
    return dbracket(Expr.sym(theory.qt(s)), H_tilde, theory.table)


def zero_tilde_phase(rep: OperatorRep, theory: TildeTheory, H_tilde: Expr, initial: GaussianSpec) -> float:
    """Phase gradient along ``q_s`` that makes ``<d/dt q~_s> = 0`` at ``t=0``.

    ``H~`` is linear in ``p~_s`` so the rate is affine in the gradient; two
    evaluations fix it.
    """
    s, _ = _sectors(theory)
    qn = theory.q(s).name
    rate = _tilde_rate(rep, theory, H_tilde, s)
    hbar = rep.hbar

    def at(g):
        spec = initial.with_phase(**{qn: g})
        st = gaussian_state(rep.grid, spec.center, spec.sigma, spec.phase, hbar)
        return rep.expectation(st, rate).real

    r0, r1 = at(0.0), at(1.0)
    slope = r1 - r0
    if abs(slope) < 1e-14:
        return 0.0
    return -r0 / slope


def hybrid_simulate(H, alpha, grid: PhaseGrid, initial: GaussianSpec, zero_tilde: bool, theory: TildeTheory,
                    *, hbar: float = 1.0, params: Mapping[str, float] | None = None, dt: float | None = None,
                    steps: int | None = None, t_final: float | None = None, tilde_offset: float = 0.5,
                    reference: bool = True) -> HybridResult:
    """Evolve the partially deconjugated theory from a Gaussian.

    ``zero_tilde`` picks phases with ``<q~_s> = <d/dt q~_s> = 0``; otherwise
    the ``p_s`` phase gradient is set so ``<q~_s>(0) = tilde_offset``.
    ``alpha=None`` uses the decoupling choice.  The reference is a classical
    point for DOF ``s`` (mean-field force) driving a 1D quantum wavefunction.
    """
    H = Expr.lift(H)
    decoupling = alpha_decoupling(H, theory)
    alpha = decoupling.alpha if alpha is None else Expr.lift(alpha)
    s, canon = _sectors(theory)
    if len(canon) != 1:
        raise GridError("the factorized reference supports one quantum DOF")
    c = canon[0]
    H_tilde = tilde_hamiltonian(H, theory, alpha)
    rep = build_representation(theory, grid, hbar=hbar, params=params)

    g_q = zero_tilde_phase(rep, theory, H_tilde, initial)
    phase = {theory.q(s).name: g_q}
    if not zero_tilde:
        phase[theory.p(s).name] = -tilde_offset / hbar
    spec = initial.with_phase(**phase)
    state = gaussian_state(grid, spec.center, spec.sigma, spec.phase, hbar)

    if dt is None:
        est = spectral_radius_estimate(rep, H_tilde)
        dt = 0.5 * hbar / est
    if steps is None:
        if t_final is None:
            raise ValueError("give steps or t_final")
        steps = max(1, int(math.ceil(t_final / dt - 1e-9)))
        dt = t_final / steps
    q_s, p_s, q_c, p_c = theory.q(s), theory.p(s), theory.q(c), theory.p(c)
    obs = {str(x): Expr.sym(x) for x in (q_s, p_s, q_c, p_c, theory.qt(s))}
    obs[f"rate({p_c})"] = dbracket(Expr.sym(p_c), H_tilde, theory.table)
    rec = evolve(state, H_tilde, rep, dt, steps, observables=obs)
    ref = None
    if reference:
        ref = factorized_reference(H, theory, grid, spec, hbar=hbar, params=params, dt=dt, steps=steps)
    return HybridResult(rec, ref, state, H_tilde, decoupling, phase)


class _Sector:
    """``sum_g f_g(q_s, p_s) O_g`` with ``O_g`` a quantum-sector operator."""

    def __init__(self, expr: Expr, s: int, rep1: OperatorRep, params):
        self.rep = rep1
        groups: dict = {}
        for (central, h, word), coef in expr.items():
            classical = tuple(t for t in word if t.index == s)
            quantum = tuple(t for t in word if t.index != s)
            value = rep1.coefficient(central, h, coef)
            groups.setdefault(quantum, []).append((value, classical))
        self.groups = []
        for quantum, terms in groups.items():
            op = Expr._raw({((), 0, quantum): ONE})
            self.groups.append((rep1.compile(op), terms))

    @staticmethod
    def _weight(terms, values) -> complex:
        total = 0j
        for value, classical in terms:
            for t in classical:
                value = value * values[t.kind]
            total += value
        return total

    def apply(self, values, phi):
        out = np.zeros_like(phi)
        for op, terms in self.groups:
            w = self._weight(terms, values)
            if w:
                out += w * op.apply(phi)
        return out

    def mean(self, values, phi) -> complex:
        return self.rep.grid.inner(phi, self.apply(values, phi))


def factorized_reference(H, theory: TildeTheory, grid: PhaseGrid, initial: GaussianSpec, *, hbar: float = 1.0,
                         params: Mapping[str, float] | None = None, dt: float, steps: int) -> TrajectoryRecord:
    """Classical DOF ``s`` at the packet centre, mean-field coupled to quantum DOF ``c``.

    ``q_s' = <d_p H>``, ``p_s' = -<d_q H>`` in the quantum state and
    ``i hbar phi' = H(q_s, p_s) phi``, integrated jointly with RK4.
    """
    s, canon = _sectors(theory)
    c = canon[0]
    q_s, p_s, q_c, p_c = theory.q(s), theory.p(s), theory.q(c), theory.p(c)
    canonical = build_theory(theory.n, names=[(theory.q(i).name, theory.p(i).name) for i in range(1, theory.n + 1)])
    canonical = canonical.with_parameters(*theory.parameters)
    cq, cp = canonical.q(c), canonical.p(c)
    axis = grid.axes[grid.axis_index(q_c.name)]
    grid1 = PhaseGrid((axis,))
    rep1 = OperatorRep(canonical, grid1, {cq: SymbolAction("diag", 0), cp: SymbolAction("deriv", 0, -1j * hbar)},
                       hbar=hbar, params=params)
    # same q/p symbols as ``theory``, but with every DOF canonical
    Hc = normal_form(Expr.lift(H), canonical.table)
    sector_H = _Sector(Hc, s, rep1, params)
    dq = _Sector(normal_form(partial(Hc, canonical.p(s), canonical.table), canonical.table), s, rep1, params)
    dp = _Sector(normal_form(-partial(Hc, canonical.q(s), canonical.table), canonical.table), s, rep1, params)
    rate_pc = _Sector(normal_form(-partial(Hc, cq, canonical.table), canonical.table), s, rep1, params)
    obs_q = rep1.compile(Expr.sym(cq))
    obs_p = rep1.compile(Expr.sym(cp))

    name = axis.name
    phi = gaussian_state(grid1, {name: initial.center.get(name, 0.0)}, {name: initial.sigma[name]},
                         {name: initial.phase.get(name, 0.0)}, hbar).psi
    y = [float(initial.center.get(q_s.name, 0.0)), float(initial.center.get(p_s.name, 0.0))]

    def values(qs, ps):
        return {Kind.POSITION: qs, Kind.MOMENTUM: ps}

    cfac = -1j / hbar

    def rhs(qs, ps, phi):
        v = values(qs, ps)
        return (dq.mean(v, phi).real, dp.mean(v, phi).real, cfac * sector_H.apply(v, phi))

    cols = {n: np.empty(steps + 1, dtype=complex) for n in (str(q_s), str(p_s), str(q_c), str(p_c), f"rate({p_c})", "norm")}

    def record(k, qs, ps, phi):
        cols[str(q_s)][k] = qs
        cols[str(p_s)][k] = ps
        cols[str(q_c)][k] = obs_q.expectation(phi)
        cols[str(p_c)][k] = obs_p.expectation(phi)
        cols[f"rate({p_c})"][k] = rate_pc.mean(values(qs, ps), phi)
        cols["norm"][k] = math.sqrt(np.vdot(phi, phi).real * grid1.cell_volume)

    qs, ps = y
    record(0, qs, ps, phi)
    n0 = cols["norm"][0].real
    for k in range(1, steps + 1):
        a1, b1, f1 = rhs(qs, ps, phi)
        a2, b2, f2 = rhs(qs + 0.5 * dt * a1, ps + 0.5 * dt * b1, phi + 0.5 * dt * f1)
        a3, b3, f3 = rhs(qs + 0.5 * dt * a2, ps + 0.5 * dt * b2, phi + 0.5 * dt * f2)
        a4, b4, f4 = rhs(qs + dt * a3, ps + dt * b3, phi + dt * f3)
        qs = qs + dt / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
        ps = ps + dt / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
        phi = phi + dt / 6 * (f1 + 2 * f2 + 2 * f3 + f4)
        record(k, qs, ps, phi)
        if abs(cols["norm"][k].real - n0) > 1e-6:
            raise InstabilityError(f"reference norm drift at step {k}")
    return TrajectoryRecord(dt, dt * np.arange(steps + 1), cols, {}, {"kind": "factorized reference"})
