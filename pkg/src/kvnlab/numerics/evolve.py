"""Fixed-step RK4 evolution, expectation values and trajectory records."""
from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..algebra import Expr, Symbol, normal_form
from ..brackets import dbracket
from .grid import StateVector
from .operators import OperatorRep

RK4_BOUND = 2 * math.sqrt(2)  # RK4 stability limit on the imaginary axis
ABORT_DRIFT = 1e-6
POWER_STEPS = 8


class InstabilityError(RuntimeError):
    pass


def spectral_radius_estimate(rep: OperatorRep, H, steps: int = POWER_STEPS, seed: int = 12345) -> float:
    """Power-iteration estimate of ``||H||`` on the grid (deterministic start vector)."""
    op = rep.compile(H)
    rng = np.random.default_rng(seed)
    shape = rep.grid.shape
    v = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(steps):
        w = op.apply(v)
        est = float(np.linalg.norm(w))
        if est == 0.0:
            return 0.0
        v = w / est
    return est


def default_dt(rep: OperatorRep, H) -> float:
    est = spectral_radius_estimate(rep, H)
    if est == 0.0:
        return 1.0
    return 0.5 * rep.hbar / est


def expectation(state, op_expr, rep: OperatorRep) -> complex:
    """``<psi| O psi>`` by grid quadrature."""
    return rep.expectation(state, op_expr)


def uncertainty(state, symbol, rep: OperatorRep) -> float:
    u = Expr.sym(symbol) if isinstance(symbol, Symbol) else Expr.lift(symbol)
    mean = expectation(state, u, rep).real
    second = expectation(state, u * u, rep).real
    return math.sqrt(max(second - mean * mean, 0.0))


@dataclass
class TrajectoryRecord:
    """Columns sampled every step; ``values`` are complex, CSV output keeps real parts."""

    dt: float
    times: np.ndarray
    values: dict
    exprs: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def names(self) -> list[str]:
        return list(self.values)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name].real

    def complex(self, name: str) -> np.ndarray:
        return self.values[name]

    def find(self, expr) -> str | None:
        expr = Expr.lift(expr)
        for name, e in self.exprs.items():
            if e == expr:
                return name
        return None

    @property
    def norm_drift(self) -> float:
        n = self.values["norm"].real
        return float(np.max(np.abs(n - n[0])))

    def rows(self):
        cols = [self.values[n].real for n in self.names]
        for k, t in enumerate(self.times):
            yield t, [c[k] for c in cols]

    def to_csv(self, path) -> Path:
        path = Path(path)
        lines = ["t," + ",".join(self.names)]
        for t, row in self.rows():
            lines.append(",".join("%.17g" % v for v in [t, *row]))
        path.write_text("\n".join(lines) + "\n")
        return path

    def to_plot_data(self, path) -> Path:
        """gnuplot-style whitespace table with a commented header."""
        path = Path(path)
        lines = ["# t " + " ".join(self.names)]
        for t, row in self.rows():
            lines.append(" ".join("%.17g" % v for v in [t, *row]))
        path.write_text("\n".join(lines) + "\n")
        return path


def _rk4_step(op, psi: np.ndarray, dt: float, hbar: float) -> np.ndarray:
    c = -1j / hbar
    k = op.apply(psi)
    k *= c
    out = psi + (dt / 6.0) * k
    for frac, weight in ((0.5, 1 / 3), (0.5, 1 / 3), (1.0, 1 / 6)):
        k *= frac * dt
        k += psi
        k = op.apply(k)
        k *= c
        out += (weight * dt) * k
    return out


def _observable_table(observables, rep) -> dict:
    if observables is None:
        return {}
    if isinstance(observables, Mapping):
        items = observables.items()
    else:
        items = ((str(Expr.lift(o)), o) for o in observables)
    return {name: Expr.lift(e) for name, e in items}


def evolve(state: StateVector, H_tilde, rep: OperatorRep, dt: float | None, steps: int,
           observables=None, uncertainties: Sequence = (), ehrenfest: Sequence = (),
           tolerance: float = 1e-9, keep_state: bool = False) -> TrajectoryRecord:
    """Integrate ``i hbar dpsi/dt = H psi`` with fixed-step RK4.

    ``observables`` maps column names to expressions (or is a list of
    expressions named by their printed form).  For each ``u`` in
    ``ehrenfest`` the columns ``<u>`` and ``[[u, H]]`` are recorded so
    :func:`ehrenfest_residual` can use them.  The run aborts with
    :class:`InstabilityError` if ``dt`` exceeds the RK4 bound for the
    estimated spectral radius or the norm drifts by more than 1e-6.
    """
    H = Expr.lift(H_tilde)
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if abs(state.hbar - rep.hbar) > 0:
        raise ValueError(f"state hbar {state.hbar} differs from representation hbar {rep.hbar}")
    est = spectral_radius_estimate(rep, H)
    if dt is None:
        dt = 0.5 * rep.hbar / est if est > 0 else 1.0
    if dt <= 0:
        raise ValueError("dt must be positive")
    if dt * est / rep.hbar > RK4_BOUND:
        raise InstabilityError(
            f"dt={dt:g} exceeds the RK4 stability bound: dt*||H||/hbar = {dt * est / rep.hbar:.3g} > {RK4_BOUND:.3g}"
        )
    op = rep.compile(H)
    table = _observable_table(observables, rep)
    for u in ehrenfest:
        u = Expr.lift(u)
        table.setdefault(str(u), u)
        rate = dbracket(u, H, rep.theory.table)
        table.setdefault(f"rate({u})", rate)
    compiled = {name: rep.compile(e) for name, e in table.items()}
    unc = [Expr.sym(s) if isinstance(s, Symbol) else Expr.lift(s) for s in uncertainties]
    unc_ops = [(f"sd({u})", rep.compile(u), rep.compile(u * u)) for u in unc]

    names = list(compiled) + [n for n, _, _ in unc_ops] + ["norm"]
    values = {n: np.empty(steps + 1, dtype=complex) for n in names}
    grid = rep.grid
    psi = state.psi.copy()
    n0 = state.norm()

    def record(k, psi):
        for name, cop in compiled.items():
            values[name][k] = cop.expectation(psi)
        for name, c1, c2 in unc_ops:
            m = c1.expectation(psi).real
            s2 = c2.expectation(psi).real
            values[name][k] = math.sqrt(max(s2 - m * m, 0.0))
        values["norm"][k] = math.sqrt(np.vdot(psi, psi).real * grid.cell_volume)

    started = _time.perf_counter()
    record(0, psi)
    for k in range(1, steps + 1):
        psi = _rk4_step(op, psi, dt, rep.hbar)
        record(k, psi)
        drift = abs(values["norm"][k].real - n0)
        if not np.isfinite(drift) or drift > ABORT_DRIFT:
            raise InstabilityError(f"norm drift {drift:.3g} at step {k} (t={k * dt:g}); reduce dt")
    elapsed = _time.perf_counter() - started
    times = dt * np.arange(steps + 1)
    exprs = dict(table)
    record_ = TrajectoryRecord(dt, times, values, exprs,
                               {"spectral_radius": est, "elapsed": elapsed, "tolerance": tolerance,
                                "fft_pairs": op.fft_pairs})
    if keep_state:
        record_.meta["final_state"] = StateVector(grid, psi, state.hbar)
    return record_


def ehrenfest_residual(trajectory: TrajectoryRecord, u, H_tilde=None, rep: OperatorRep | None = None) -> float:
    """``max_t |d<u>/dt - <[[u, H]]>|`` with a centred difference on interior samples."""
    u = Expr.lift(u)
    name = trajectory.find(u)
    if name is None and rep is not None:
        name = trajectory.find(normal_form(u, rep.theory.table))
    if name is None:
        raise KeyError(f"trajectory did not record <{u}>")
    rate_name = f"rate({u})"
    if rate_name not in trajectory.values:
        if H_tilde is None or rep is None:
            raise KeyError(f"trajectory did not record <[[{u}, H]]>")
        rate_name = trajectory.find(dbracket(u, H_tilde, rep.theory.table))
        if rate_name is None:
            raise KeyError(f"trajectory did not record <[[{u}, H]]>")
    x = trajectory.complex(name)
    r = trajectory.complex(rate_name)
    if len(x) < 3:
        raise ValueError("need at least two steps for a centred difference")
    deriv = (x[2:] - x[:-2]) / (2 * trajectory.dt)
    return float(np.max(np.abs(deriv - r[1:-1])))
