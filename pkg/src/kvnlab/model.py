"""Line-oriented model files.

Example::

    # KvN harmonic oscillator
    dof q p deconjugated
    param m = 1
    param k = 1
    hbar = 1
    hamiltonian = p^2/(2*m) + k*q^2/2
    alpha = 0
    grid q -5 5 128
    grid p -5 5 128
    initial q center=1 sigma=0.3
    initial p center=0 sigma=0.3
    dt = 0.001
    steps = 100
    observables = q, p, p~
    uncertainties = q, p~
    command:
      eom
      bracket q p~
    end

``dof`` lines come in DOF order; ``param`` values are only needed for
numerics.  Values after ``=`` in ``observables`` are comma-separated
expressions.
"""
from __future__ import annotations

import re
import shlex
from dataclasses import dataclass, field
from pathlib import Path

from .algebra import TILDE_KINDS, Expr
from .deconjugation import TildeTheory, build_theory
from .dsl import RESERVED, ParseError, parse_expr
from .numerics.grid import Axis, GaussianSpec, GridError, PhaseGrid


class ModelError(ParseError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


_NAME = re.compile(r"[a-z][a-z0-9_]*$")
_LIST_KEYS = {"observables", "uncertainties"}


@dataclass
class ModelFile:
    dofs: list = field(default_factory=list)  # (q name, p name, deconjugated?)
    params: dict = field(default_factory=dict)  # name -> float or None
    hbar: float = 1.0
    hamiltonian_text: str = ""
    alpha_text: str | None = None
    grid_axes: list = field(default_factory=list)
    initial: dict = field(default_factory=dict)  # axis -> {"center":, "sigma":, "phase":}
    dt: float | None = None
    steps: int | None = None
    t_final: float | None = None
    tilde_offset: float = 0.5
    observables: list = field(default_factory=list)
    uncertainties: list = field(default_factory=list)
    commands: list = field(default_factory=list)
    path: str | None = None
    _theory: TildeTheory | None = field(default=None, repr=False)

    # ---------------------------------------------------------------- theory
    @property
    def theory(self) -> TildeTheory:
        if self._theory is None:
            subset = [i for i, (_, _, d) in enumerate(self.dofs, start=1) if d]
            names = [(q, p) for q, p, _ in self.dofs]
            self._theory = build_theory(len(self.dofs), subset=subset, names=names, parameters=tuple(self.params))
        return self._theory

    def parse(self, text: str) -> Expr:
        return parse_expr(text, self.theory.namespace())

    @property
    def hamiltonian(self) -> Expr:
        return self.parse(self.hamiltonian_text)

    @property
    def alpha(self) -> Expr:
        return Expr.zero() if self.alpha_text is None else self.parse(self.alpha_text)

    def numeric_params(self) -> dict:
        return {k: v for k, v in self.params.items() if v is not None}

    # ----------------------------------------------------------------- grid
    @property
    def grid(self) -> PhaseGrid:
        if not self.grid_axes:
            raise ModelError("model has no grid lines")
        return PhaseGrid(tuple(self.grid_axes))

    @property
    def initial_spec(self) -> GaussianSpec:
        center = {a: v["center"] for a, v in self.initial.items()}
        sigma = {a: v["sigma"] for a, v in self.initial.items() if v.get("sigma") is not None}
        phase = {a: v["phase"] for a, v in self.initial.items() if v.get("phase")}
        return GaussianSpec(center, sigma, phase)

    def expected_axes(self) -> list[str]:
        out = []
        for q, p, d in self.dofs:
            out.append(q)
            if d:
                out.append(p)
        return out


def _number(text: str, line: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise ModelError(f"expected a number, got {text!r}", line) from None


def _integer(text: str, line: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise ModelError(f"expected an integer, got {text!r}", line) from None


def _check_name(name: str, line: int) -> str:
    if not _NAME.match(name) or name in RESERVED:
        raise ModelError(f"invalid name {name!r}", line)
    return name


def parse_model(text: str, path: str | None = None) -> ModelFile:
    m = ModelFile(path=path)
    seen = set()
    in_commands = False
    ham_line = alpha_line = None
    list_lines = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if in_commands:
            if line == "end":
                in_commands = False
                continue
            try:
                m.commands.append((lineno, shlex.split(line)))
            except ValueError as exc:
                raise ModelError(str(exc), lineno) from None
            continue
        if line in ("command:", "commands:"):
            if "command" in seen:
                raise ModelError("only one command block is allowed", lineno)
            seen.add("command")
            in_commands = True
            continue
        word, _, rest = line.partition(" ")
        rest = rest.strip()
        if word == "dof":
            parts = rest.split()
            if len(parts) != 3 or parts[2] not in ("deconjugated", "canonical"):
                raise ModelError("expected 'dof <q> <p> deconjugated|canonical'", lineno)
            q, p = _check_name(parts[0], lineno), _check_name(parts[1], lineno)
            m.dofs.append((q, p, parts[2] == "deconjugated"))
            continue
        if word == "param":
            name, eq, value = rest.partition("=")
            name = _check_name(name.strip(), lineno)
            if name in m.params:
                raise ModelError(f"parameter {name} declared twice", lineno)
            m.params[name] = _number(value.strip(), lineno) if eq else None
            continue
        if word == "grid":
            parts = rest.split()
            if len(parts) != 4:
                raise ModelError("expected 'grid <axis> <lo> <hi> <points>'", lineno)
            try:
                m.grid_axes.append(Axis(parts[0], _integer(parts[3], lineno),
                                        _number(parts[1], lineno), _number(parts[2], lineno)))
            except GridError as exc:
                raise ModelError(str(exc), lineno) from None
            continue
        if word == "initial":
            parts = rest.split()
            if not parts:
                raise ModelError("expected 'initial <axis> center=.. sigma=.. [phase=..]'", lineno)
            entry = {"center": 0.0, "sigma": None, "phase": 0.0}
            for kv in parts[1:]:
                k, eq, v = kv.partition("=")
                if not eq or k not in entry:
                    raise ModelError(f"bad initial-state field {kv!r}", lineno)
                entry[k] = _number(v, lineno)
            m.initial[parts[0]] = entry
            continue
        key, eq, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not eq:
            raise ModelError(f"cannot read {line!r}", lineno)
        if key in seen:
            raise ModelError(f"{key} given twice", lineno)
        seen.add(key)
        if key == "hbar":
            m.hbar = _number(value, lineno)
            if m.hbar <= 0:
                raise ModelError("hbar must be positive", lineno)
        elif key == "dt":
            m.dt = _number(value, lineno)
        elif key == "steps":
            m.steps = _integer(value, lineno)
        elif key == "t_final":
            m.t_final = _number(value, lineno)
        elif key == "tilde_offset":
            m.tilde_offset = _number(value, lineno)
        elif key == "hamiltonian":
            m.hamiltonian_text, ham_line = value, lineno
        elif key == "alpha":
            m.alpha_text, alpha_line = value, lineno
        elif key in _LIST_KEYS:
            items = [v.strip() for v in value.split(",") if v.strip()]
            setattr(m, key, items)
            list_lines[key] = lineno
        else:
            raise ModelError(f"unknown key {key!r}", lineno)
    if in_commands:
        raise ModelError("command block is missing 'end'")
    if not m.dofs:
        raise ModelError("no dof lines")
    if not m.hamiltonian_text:
        raise ModelError("no hamiltonian")
    names = [n for q, p, _ in m.dofs for n in (q, p)]
    dup = {n for n in names if names.count(n) > 1} | (set(names) & set(m.params))
    if dup:
        raise ModelError(f"names declared twice: {sorted(dup)}")
    _validate(m, ham_line, alpha_line, list_lines)
    return m


def _reparse(m: ModelFile, text: str, line) -> Expr:
    try:
        return m.parse(text)
    except ParseError as exc:
        raise ModelError(str(exc), line) from None


def _validate(m: ModelFile, ham_line, alpha_line, list_lines) -> None:
    for text, line in ((m.hamiltonian_text, ham_line), (m.alpha_text, alpha_line)):
        if text is None:
            continue
        e = _reparse(m, text, line)
        tildes = [s for s in e.operator_symbols() if s.kind in TILDE_KINDS]
        if tildes:
            raise ModelError(f"{text!r} may only use original variables, found {sorted(map(str, tildes))}", line)
        if not e.is_hbar_free():
            raise ModelError(f"{text!r} must not contain hbar", line)
    for key, line in list_lines.items():
        for text in getattr(m, key):
            _reparse(m, text, line)
    if m.grid_axes:
        have = sorted(a.name for a in m.grid_axes)
        if have != sorted(m.expected_axes()):
            raise ModelError(f"grid axes {have} do not match the dof declarations (need {m.expected_axes()})")
        try:
            m.grid
        except GridError as exc:
            raise ModelError(str(exc)) from None
        unknown = set(m.initial) - set(have)
        if unknown:
            raise ModelError(f"initial state for unknown axes {sorted(unknown)}")


def load_model(path) -> ModelFile:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ModelError(f"cannot read model file {path}: {exc.strerror}") from None
    return parse_model(text, str(path))
