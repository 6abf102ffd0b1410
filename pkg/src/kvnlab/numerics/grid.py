"""Periodic phase-space grids and wavefunctions on them."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

DEFAULT_BUDGET = 2 ** 22


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Axis:
    """One periodic axis ``[lo, hi)`` with ``n`` points, bound to a symbol name."""

    name: str
    n: int
    lo: float
    hi: float

    def __post_init__(self):
        if self.n < 2 or self.n & (self.n - 1):
            raise GridError(f"axis {self.name}: point count {self.n} is not a power of two")
        if not self.hi > self.lo:
            raise GridError(f"axis {self.name}: empty domain [{self.lo}, {self.hi})")

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / self.n

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def coords(self) -> np.ndarray:
        return self.lo + self.spacing * np.arange(self.n)

    def wavenumbers(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.n, d=self.spacing)


@dataclass(frozen=True)
class PhaseGrid:
    axes: tuple
    budget: int = DEFAULT_BUDGET
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        if not self.axes:
            raise GridError("grid needs at least one axis")
        if len(self.axes) > 3:
            raise GridError("grids beyond 3 axes are not supported")
        names = [a.name for a in self.axes]
        if len(set(names)) != len(names):
            raise GridError(f"duplicate axis names in {names}")
        if self.size > self.budget:
            raise GridError(f"{self.size} grid points exceed the budget of {self.budget}")
        object.__setattr__(self, "_index", {a.name: k for k, a in enumerate(self.axes)})

    @classmethod
    def of(cls, *specs, budget: int = DEFAULT_BUDGET) -> "PhaseGrid":
        """``PhaseGrid.of(("q", 128, -5, 5), ("p", 128, -5, 5))``."""
        return cls(tuple(Axis(*s) for s in specs), budget)

    @property
    def shape(self) -> tuple:
        return tuple(a.n for a in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod([a.spacing for a in self.axes]))

    @property
    def names(self) -> tuple:
        return tuple(a.name for a in self.axes)

    def axis_index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise GridError(f"grid has no axis {name!r}") from None

    def _broadcast(self, k: int, values: np.ndarray) -> np.ndarray:
        shape = [1] * len(self.axes)
        shape[k] = self.axes[k].n
        return values.reshape(shape)

    def coordinate(self, name: str) -> np.ndarray:
        k = self.axis_index(name)
        return self._broadcast(k, self.axes[k].coords())

    def wavenumber(self, name: str) -> np.ndarray:
        k = self.axis_index(name)
        return self._broadcast(k, self.axes[k].wavenumbers())

    def inner(self, a: np.ndarray, b: np.ndarray) -> complex:
        return complex(np.vdot(a, b)) * self.cell_volume


@dataclass
class StateVector:
    grid: PhaseGrid
    psi: np.ndarray
    hbar: float = 1.0

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=complex)
        if self.psi.shape != self.grid.shape:
            raise GridError(f"amplitude shape {self.psi.shape} does not match grid {self.grid.shape}")

    def norm(self) -> float:
        return float(np.sqrt(np.vdot(self.psi, self.psi).real * self.grid.cell_volume))

    def normalized(self) -> "StateVector":
        n = self.norm()
        if n == 0:
            raise GridError("cannot normalize the zero state")
        return StateVector(self.grid, self.psi / n, self.hbar)

    def copy(self) -> "StateVector":
        return StateVector(self.grid, self.psi.copy(), self.hbar)

    def density(self) -> np.ndarray:
        return np.abs(self.psi) ** 2


@dataclass(frozen=True)
class GaussianSpec:
    """Per-axis centre, standard deviation of ``|psi|^2`` and phase gradient."""

    center: Mapping[str, float]
    sigma: Mapping[str, float]
    phase: Mapping[str, float] = field(default_factory=dict)

    def with_phase(self, **phase) -> "GaussianSpec":
        merged = dict(self.phase)
        merged.update(phase)
        return GaussianSpec(dict(self.center), dict(self.sigma), merged)


def gaussian_state(grid: PhaseGrid, center: Mapping[str, float], sigma: Mapping[str, float],
                   phase: Mapping[str, float] | None = None, hbar: float = 1.0,
                   min_margin: float = 6.0) -> StateVector:
    """Product Gaussian ``prod_k exp(-(x_k-c_k)^2/(4 s_k^2) + i g_k (x_k - c_k))``.

    ``sigma`` is the standard deviation of the density, so ``Delta x_k = s_k``.
    The packet must sit ``min_margin`` standard deviations inside each domain.
    """
    phase = phase or {}
    extra = set(center) | set(sigma) | set(phase)
    unknown = extra - set(grid.names)
    if unknown:
        raise GridError(f"initial state mentions unknown axes {sorted(unknown)}")
    psi = np.ones(grid.shape, dtype=complex)
    for axis in grid.axes:
        c = float(center.get(axis.name, 0.0))
        if axis.name not in sigma:
            raise GridError(f"no width given for axis {axis.name}")
        s = float(sigma[axis.name])
        if s <= 0:
            raise GridError(f"axis {axis.name}: width must be positive")
        if c - min_margin * s < axis.lo or c + min_margin * s > axis.hi:
            raise GridError(f"axis {axis.name}: packet closer than {min_margin} sigma to the boundary")
        x = grid.coordinate(axis.name)
        g = float(phase.get(axis.name, 0.0))
        psi = psi * np.exp(-((x - c) ** 2) / (4 * s * s) + 1j * g * (x - c))
    return StateVector(grid, psi, hbar).normalized()


def random_smooth_states(grid: PhaseGrid, count: int, seed: int = 0) -> list[np.ndarray]:
    """Random band-limited states: Gaussians with random centres, widths and chirps.

    The width on an ``N``-point axis of length ``L`` is about
    ``L sqrt(0.45 / (2 pi N))``, which balances the amplitude left at the
    boundary against the tail of the spectrum (both near ``exp(-25)`` at
    ``N = 64``).
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        psi = np.ones(grid.shape, dtype=complex)
        for axis in grid.axes:
            L = axis.length
            c = axis.lo + L / 2 + rng.uniform(-0.05, 0.05) * L
            s = L * np.sqrt(0.45 / (2 * np.pi * axis.n)) * rng.uniform(0.85, 1.15)
            g = rng.uniform(-0.5, 0.5) / s
            x = grid.coordinate(axis.name)
            psi = psi * np.exp(-((x - c) ** 2) / (4 * s * s) + 1j * g * (x - c))
        psi /= np.sqrt(np.vdot(psi, psi).real * grid.cell_volume)
        out.append(psi)
    return out


def axes_for(names: Sequence[str], n, lo, hi) -> tuple:
    return tuple(Axis(name, n, lo, hi) for name in names)
