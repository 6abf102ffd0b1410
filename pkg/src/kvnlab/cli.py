"""``kvnlab`` command-line front end.

Exit status: 0 success, 1 model/parse error, 2 theory error (coverage or a
precondition), 3 numeric instability.
"""
from __future__ import annotations

import argparse
import random
import sys
from pathlib import Path

from .algebra import AlgebraError, Expr, normal_form, underline, hbar_term
from .brackets import dbracket, mccoy_bracket
from .deconjugation import TheoryError, tilde_hamiltonian, tilde_image, tilde_lagrangian
from .dsl import ParseError
from .dynamics import alpha_decoupling, all_eoms, conserved_check, extra_terms
from .model import ModelError, ModelFile, load_model
from .numerics.evolve import InstabilityError, evolve
from .numerics.grid import GridError, gaussian_state, random_smooth_states
from .numerics.hybrid import hybrid_simulate
from .numerics.operators import build_representation, commutator_residual

EXIT_PARSE, EXIT_THEORY, EXIT_UNSTABLE = 1, 2, 3
COMMANDS = ("bracket", "deconjugate", "eom", "lagrangian", "conserve", "extra-terms", "alpha",
            "simulate", "hybrid", "verify", "run")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kvnlab", description="Deconjugated (KvN) mechanics: symbolic and numeric tools.")
    p.add_argument("command", nargs="?", choices=COMMANDS, help="subcommand (default: run the model's command block)")
    p.add_argument("args", nargs="*", help="expressions for bracket/conserve")
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--out", default=".", help="directory for CSV and plot data")
    p.add_argument("--dt", type=float)
    p.add_argument("--steps", type=int)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--alpha-zero", action="store_true", help="ignore the model's alpha")
    g.add_argument("--alpha-decouple", action="store_true", help="use the decoupling alpha")
    p.add_argument("--zero-tilde", type=_bool, default=True, metavar="true|false")
    return p


class Session:
    """One model plus the flags; each command writes text lines to ``out``."""

    def __init__(self, model: ModelFile, opts, out=sys.stdout):
        self.model = model
        self.opts = opts
        self.out = out
        self.theory = model.theory

    def say(self, text: str = "") -> None:
        print(text, file=self.out)

    # --------------------------------------------------------------- pieces
    def alpha(self) -> Expr:
        if self.opts.alpha_zero:
            return Expr.zero()
        if self.opts.alpha_decouple:
            return alpha_decoupling(self.model.hamiltonian, self.theory).alpha
        return self.model.alpha

    def H_tilde(self) -> Expr:
        return tilde_hamiltonian(self.model.hamiltonian, self.theory, self.alpha())

    def _expr(self, text: str) -> Expr:
        return self.model.parse(text)

    # ------------------------------------------------------------- commands
    def cmd_bracket(self, args):
        if len(args) != 2:
            raise UsageError("bracket takes two expressions")
        u, v = (self._expr(a) for a in args)
        self.say(str(dbracket(u, v, self.theory.table)))

    def cmd_deconjugate(self, args):
        self.say(f"H~ = {self.H_tilde()}")

    def cmd_eom(self, args):
        for eq in all_eoms(self.H_tilde(), self.theory):
            self.say(str(eq))

    def cmd_lagrangian(self, args):
        self.say(f"L~ = {tilde_lagrangian(self.H_tilde(), self.theory)}")

    def cmd_conserve(self, args):
        if len(args) != 1:
            raise UsageError("conserve takes one expression")
        r = conserved_check(self._expr(args[0]), self.model.hamiltonian, self.theory, self.alpha())
        self.say(f"canonical: {str(r.canonical_conserved).lower()}")
        self.say(f"tilde: {str(r.tilde_conserved).lower()}")

    def cmd_extra_terms(self, args):
        for line in extra_terms(self.model.hamiltonian, self.theory, self.alpha()).lines():
            self.say(line)

    def cmd_alpha(self, args):
        d = alpha_decoupling(self.model.hamiltonian, self.theory)
        (s,) = self.theory.subset
        for line in d.lines(self.theory.q(s).name):
            self.say(line)

    def _steps(self):
        steps = self.opts.steps if self.opts.steps is not None else self.model.steps
        dt = self.opts.dt if self.opts.dt is not None else self.model.dt
        return dt, steps

    def _outdir(self) -> Path:
        d = Path(self.opts.out)
        d.mkdir(parents=True, exist_ok=True)
        return d

    def cmd_simulate(self, args):
        m = self.model
        rep = build_representation(self.theory, m.grid, hbar=m.hbar, params=m.numeric_params())
        spec = m.initial_spec
        state = gaussian_state(m.grid, spec.center, spec.sigma, spec.phase, m.hbar)
        dt, steps = self._steps()
        if steps is None:
            if m.t_final is None or dt is None:
                raise ModelError("simulate needs steps (or dt and t_final)")
            steps = max(1, round(m.t_final / dt))
        names = m.observables or [s.name for s in self.theory.all_symbols()]
        obs = {n: self._expr(n) for n in names}
        unc = [self._expr(n) for n in m.uncertainties]
        rec = evolve(state, self.H_tilde(), rep, dt, steps, observables=obs, uncertainties=unc)
        d = self._outdir()
        rec.to_csv(d / "simulate.csv")
        rec.to_plot_data(d / "simulate.dat")
        self.say(f"simulate: {steps} steps, dt={rec.dt:.17g}, norm drift {rec.norm_drift:.3e}")
        self.say(f"wrote {d / 'simulate.csv'}")

    def cmd_hybrid(self, args):
        m = self.model
        dt, steps = self._steps()
        # the decoupling alpha unless the flags or the model say otherwise
        alpha = None
        if self.opts.alpha_zero:
            alpha = Expr.zero()
        elif m.alpha_text is not None and not self.opts.alpha_decouple:
            alpha = m.alpha
        res = hybrid_simulate(m.hamiltonian, alpha, m.grid, m.initial_spec, self.opts.zero_tilde, self.theory,
                              hbar=m.hbar, params=m.numeric_params(), dt=dt, steps=steps, t_final=m.t_final,
                              tilde_offset=m.tilde_offset)
        d = self._outdir()
        res.tilde.to_csv(d / "hybrid_tilde.csv")
        res.tilde.to_plot_data(d / "hybrid_tilde.dat")
        res.reference.to_csv(d / "hybrid_reference.csv")
        res.reference.to_plot_data(d / "hybrid_reference.dat")
        q, p = self.theory.q, self.theory.p
        (s,) = self.theory.subset
        c = next(j for j in range(1, self.theory.n + 1) if j != s)
        self.say(f"hybrid: zero_tilde={str(self.opts.zero_tilde).lower()}, {len(res.tilde.times) - 1} steps, dt={res.tilde.dt:.17g}")
        self.say(f"max |<{p(c)}> - reference| = {res.deviation(p(c).name):.3e}")
        self.say(f"<{self.theory.qt(s)}>(0) = {res.tilde[self.theory.qt(s).name][0]:.6f}")
        self.say(f"wrote {d / 'hybrid_tilde.csv'} and {d / 'hybrid_reference.csv'}")

    def cmd_verify(self, args):
        failures = 0
        for name, ok, detail in verify_model(self.model, self.H_tilde()):
            self.say(f"{'PASS' if ok else 'FAIL'} {name}{': ' + detail if detail else ''}")
            failures += not ok
        if failures:
            raise TheoryError(f"{failures} invariant check(s) failed")

    def cmd_run(self, args):
        if not self.model.commands:
            raise UsageError("the model has no command block and no subcommand was given")
        for _, words in self.model.commands:
            cmd, rest = words[0], words[1:]
            if cmd not in COMMANDS or cmd == "run":
                raise ModelError(f"unknown command {cmd!r} in the command block")
            self.say(f"## {' '.join(words)}")
            self.dispatch(cmd, rest)

    def dispatch(self, cmd, args):
        getattr(self, "cmd_" + cmd.replace("-", "_"))(args)


def _random_poly(rng: random.Random, symbols, degree: int = 3, terms: int = 3) -> Expr:
    out = Expr.zero()
    for _ in range(terms):
        word = Expr.const(rng.randint(-3, 3))
        for _ in range(rng.randint(0, degree)):
            word = word * Expr.sym(rng.choice(symbols))
        out = out + word
    return out


def verify_model(model: ModelFile, H_tilde: Expr, samples: int = 20, seed: int = 0):
    """Invariant checks on the model's theory; yields ``(name, ok, detail)``."""
    th = model.theory
    table = th.table
    rng = random.Random(seed)
    syms = th.all_symbols()

    def br(a, b):
        return dbracket(a, b, table)

    bad = {"antisymmetry": 0, "jacobi": 0, "leibniz": 0}
    for _ in range(samples):
        u, v, w = (_random_poly(rng, syms) for _ in range(3))
        if br(u, v) != -br(v, u):
            bad["antisymmetry"] += 1
        jac = normal_form(br(u, br(v, w)) + br(v, br(w, u)) + br(w, br(u, v)), table)
        if not jac.is_zero():
            bad["jacobi"] += 1
        lhs = br(u, v * w)
        rhs = normal_form(br(u, v) * w + v * br(u, w), table)
        if lhs != rhs:
            bad["leibniz"] += 1
    for k, n in bad.items():
        yield f"bracket {k}", n == 0, f"{samples} random triples"

    printed = [H_tilde] + [e.rhs for e in all_eoms(H_tilde, th)]
    ok = all(normal_form(model.parse(str(e)), table) == normal_form(e, table) for e in printed)
    yield "print/parse round trip", ok, f"{len(printed)} expressions"

    yield "energy conservation [[H~, H~]] = 0", br(H_tilde, H_tilde).is_zero(), ""

    if th.is_full:
        originals = th.originals()
        misses = 0
        for _ in range(samples):
            u, v = _random_poly(rng, originals), _random_poly(rng, originals)
            lhs = underline(hbar_term(mccoy_bracket(u, v, th.canonical), 0))
            rhs = br(u, tilde_image(v, th))
            if normal_form(lhs, table) != rhs:
                misses += 1
        yield "KvN extraction (hbar^0 of the commutator vs tilde bracket)", misses == 0, f"{samples} random pairs"

    if model.grid_axes:
        try:
            rep = build_representation(th, model.grid, hbar=model.hbar, params=model.numeric_params())
        except (TheoryError, GridError) as exc:
            yield "grid commutators", False, str(exc)
            return
        worst = 0.0
        states = random_smooth_states(model.grid, 3, seed=seed)
        for a in syms:
            for b in syms:
                if a < b:
                    for psi in states:
                        worst = max(worst, commutator_residual(rep, a, b, psi))
        yield "grid commutators", worst < 1e-8, f"max relative residual {worst:.2e}"


USAGE_HINT = "usage: kvnlab [command] [args...] --model PATH [--out DIR] [--dt DT] [--steps N] " \
             "[--alpha-zero|--alpha-decouple] [--zero-tilde true|false]"


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        opts = parser.parse_args(argv)
    except UsageError as exc:
        print(parser.format_usage().rstrip(), file=err)
        print(f"kvnlab: error: {exc}", file=err)
        return EXIT_PARSE
    try:
        model = load_model(opts.model)
        session = Session(model, opts, out)
        session.dispatch(opts.command or "run", opts.args)
    except UsageError as exc:
        print(parser.format_usage().rstrip(), file=err)
        print(f"kvnlab: error: {exc}", file=err)
        return EXIT_PARSE
    except (ParseError, ModelError) as exc:
        print(f"kvnlab: parse error: {exc}", file=err)
        return EXIT_PARSE
    except InstabilityError as exc:
        print(f"kvnlab: numeric instability: {exc}", file=err)
        return EXIT_UNSTABLE
    except (AlgebraError, GridError) as exc:
        print(f"kvnlab: theory error: {exc}", file=err)
        return EXIT_THEORY
    except ValueError as exc:
        print(f"kvnlab: error: {exc}", file=err)
        return EXIT_PARSE
    return 0


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
