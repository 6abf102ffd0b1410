"""Acceptance gate: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are printed
even when output capture is on.
"""
import math
import random
import time

import numpy as np
import pytest

from kvnlab.algebra import Expr, hbar_term, normal_form, underline
from kvnlab.brackets import dbracket, mccoy_bracket
from kvnlab.deconjugation import build_theory, tilde_hamiltonian, tilde_image, tilde_lagrangian
from kvnlab.dynamics import alpha_decoupling, conserved_check, eom, extra_terms
from kvnlab.numerics import (
    GaussianSpec,
    PhaseGrid,
    build_representation,
    ehrenfest_residual,
    evolve,
    gaussian_state,
    hybrid_simulate,
    uncertainty,
)

from conftest import random_poly


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        assert ok, detail
    return emit


# 1 --------------------------------------------------------------------------

def _symbolic_goldens():
    checks = {}
    two = build_theory(2, parameters=("m", "k"))
    H = two.parse("p_1*p_2/m + k*q_1*q_2")
    t = two.table
    checks["a two-DOF"] = (
        eom(two.q(1), H, t).rhs == two.parse("p_2/m") and eom(two.q(2), H, t).rhs == two.parse("p_1/m")
        and eom(two.p(1), H, t).rhs == two.parse("-k*q_2") and eom(two.p(2), H, t).rhs == two.parse("-k*q_1"))

    th = build_theory(1, subset=(1,), parameters=("m", "k", "a"))
    alpha = th.parse("a*q^2*p^2")
    ok_b = ok_c = ok_d = True
    for V, dV, d2V in (("k*q^2/2", "k*q", "k"), ("q^4/4", "q^3", "3*q^2")):
        H1 = th.parse(f"p^2/(2*m) + {V}")
        Ht = tilde_hamiltonian(H1, th, alpha)
        nf = lambda s: normal_form(th.parse(s), th.table)  # noqa: E731
        ok_b &= normal_form(Ht, th.table) == nf(f"p~*p/m + ({dV})*q~ + a*q^2*p^2")
        ok_c &= eom(th.qt(1), Ht, th.table).rhs == nf("p~/m + 2*a*q^2*p")
        ok_c &= eom(th.pt(1), Ht, th.table).rhs == nf(f"-({d2V})*q~ - 2*a*q*p^2")
        L = tilde_lagrangian(Ht, th)
        ok_d &= normal_form(L, th.table) == nf(f"m*d_q*d_q~ - ({dV})*q~ - a*q^2*(m*d_q)^2")
    checks["b tilde-Hamiltonian"] = ok_b
    checks["c tilde EOMs"] = ok_c
    checks["d tilde-Lagrangian"] = ok_d

    part = build_theory(2, subset=(1,), parameters=("m_1", "m_2", "lam"))
    ok_e = True
    for V, dq2V, cross in (("lam*q_1*q_2", "lam*q_1", "lam"), ("lam*q_1^2*q_2", "lam*q_1^2", "2*lam*q_1")):
        H2 = part.parse(f"p_1^2/(2*m_1) + p_2^2/(2*m_2) + {V}")
        rep = extra_terms(H2, part)
        ok_e &= rep["q_2"].total == part.parse("p_2/m_2")
        ok_e &= rep["p_2"].total == normal_form(part.parse(f"-{dq2V} - ({cross})*q_1~"), part.table)
    checks["e partial case"] = ok_e

    H3 = part.parse("p_1^2/(2*m_1) + p_2^2/(2*m_2) + lam*q_1^2*q_2")
    d = alpha_decoupling(H3, part)
    checks["f alpha decoupling"] = (
        d.alpha == part.parse("-p_1^2/(2*m_1)")
        and d.qt_ddot == normal_form(part.parse("-(2*lam*q_2)*q_1~/m_1"), part.table))
    return checks


def test_criterion_1_symbolic_goldens(report):
    start = time.perf_counter()
    checks = _symbolic_goldens()
    elapsed = time.perf_counter() - start
    failed = [k for k, v in checks.items() if not v]
    ok = not failed and elapsed < 1.0
    report(1, ok, f"{len(checks) - len(failed)}/{len(checks)} golden groups exact in {elapsed:.2f}s (< 1s)"
           + (f"; failed {failed}" if failed else ""))


# 2 --------------------------------------------------------------------------

def test_criterion_2_bracket_axioms(report):
    tables = {"canonical": build_theory(2), "deconjugated": build_theory(2, subset=(1, 2)),
              "partial": build_theory(2, subset=(1,))}
    start = time.perf_counter()
    bad = []
    for name, th in tables.items():
        rng = random.Random(2024)
        syms, t = th.all_symbols(), th.table
        b = lambda x, y: dbracket(x, y, t)  # noqa: E731
        for _ in range(500):
            u, v, w = (random_poly(rng, syms, degree=4, terms=3) for _ in range(3))
            c = rng.randint(-5, 5)
            ok = (b(u, v) == -b(v, u)
                  and b(u, c * v + w) == c * b(u, v) + b(u, w)
                  and (b(u, b(v, w)) + b(v, b(w, u)) + b(w, b(u, v))).is_zero()
                  and b(u, v * w) == normal_form(b(u, v) * w + v * b(u, w), t)
                  and b(u, Expr.const(c)).is_zero())
            if not ok:
                bad.append(name)
    elapsed = time.perf_counter() - start
    report(2, not bad and elapsed < 30, f"1500 triples (500 per table), {len(bad)} violations, {elapsed:.1f}s (< 30s)")


# 3 --------------------------------------------------------------------------

def test_criterion_3_mccoy(report):
    th = build_theory(2)
    rng = random.Random(3)
    syms = th.originals()
    bad = 0
    for _ in range(200):
        u = random_poly(rng, syms, degree=4, terms=3)
        v = random_poly(rng, syms, degree=4, terms=3)
        bad += mccoy_bracket(u, v, th.table) != dbracket(u, v, th.table)
    report(3, bad == 0, f"McCoy == [u,v]/(i hbar) on 200 random pairs, {bad} mismatches")


# 4 --------------------------------------------------------------------------

def test_criterion_4_kvn_extraction(report):
    canon = build_theory(2)
    kvn = build_theory(2, subset=(1, 2))
    to_kvn = {s: Expr.sym(t) for s, t in zip(canon.originals(), kvn.originals())}
    rng = random.Random(4)
    bad = 0
    for _ in range(200):
        u = random_poly(rng, canon.originals(), degree=4, terms=3)
        v = random_poly(rng, canon.originals(), degree=4, terms=3)
        lhs = underline(hbar_term(mccoy_bracket(u, v, canon.table), 0)).subs(to_kvn)
        rhs = dbracket(u.subs(to_kvn), tilde_image(v.subs(to_kvn), kvn), kvn.table)
        bad += lhs != rhs
    report(4, bad == 0, f"underline(hbar^0 McCoy) == tilde bracket on 200 random pairs, {bad} mismatches")


# 5 --------------------------------------------------------------------------

def _conserved_pairs(th, rng, count):
    q1, p1, q2, p2 = (Expr.sym(s) for s in th.originals())
    L = q1 * p2 - q2 * p1
    r2, k2, d = q1 * q1 + q2 * q2, p1 * p1 + p2 * p2, q1 * p1 + q2 * p2
    pairs = []
    while len(pairs) < count:
        kind = len(pairs) % 3
        if kind == 0:  # functions of H
            H = random_poly(rng, th.originals(), degree=3, terms=3)
            u = rng.randint(1, 3) * H * H + rng.randint(-2, 2) * H + 1
        elif kind == 1:  # rotation-invariant H, angular momentum
            a, b, c = (rng.randint(-3, 3) for _ in range(3))
            H = a * k2 + b * r2 * r2 + c * d * L + k2 * r2
            u = L * L + rng.randint(1, 3) * L
        else:  # translation-invariant along q_1
            H = random_poly(rng, [th.p(1), th.q(2), th.p(2)], degree=3, terms=3)
            u = p1 * p1 + rng.randint(1, 3) * p1
        pairs.append((u, H))
    return pairs


def test_criterion_5_conservation(report):
    th = build_theory(2, subset=(1, 2))
    pairs = _conserved_pairs(th, random.Random(5), 100)
    canon = tilde = 0
    for u, H in pairs:
        r = conserved_check(u, H, th)
        canon += r.canonical_conserved
        tilde += r.tilde_conserved
    report(5, canon == 100 and tilde == 100,
           f"{canon}/100 constructed pairs conserved canonically, {tilde}/100 after deconjugation")


# 6 --------------------------------------------------------------------------

KVN = build_theory(1, subset=(1,), parameters=("m", "k"))
HO = KVN.parse("p^2/(2*m) + k*q^2/2")


def test_criterion_6_harmonic_oscillator(report):
    grid = PhaseGrid.of(("q", 128, -5, 5), ("p", 128, -5, 5))
    rep = build_representation(KVN, grid, params={"m": 1, "k": 1})
    Ht = tilde_hamiltonian(HO, KVN)
    st = gaussian_state(grid, {"q": 1, "p": 0}, {"q": 0.5, "p": 0.5})
    steps = round(2 * math.pi / 1e-3)
    start = time.perf_counter()
    rec = evolve(st, Ht, rep, 2 * math.pi / steps, steps, uncertainties=[KVN.q(1), KVN.pt(1)],
                 ehrenfest=[Expr.sym(KVN.q(1))])
    elapsed = time.perf_counter() - start
    err = float(np.max(np.abs(rec["q"] - np.cos(rec.times))))
    floor = float(np.min(rec["sd(q)"] * rec["sd(p~)"]))
    ehr = ehrenfest_residual(rec, Expr.sym(KVN.q(1)))
    ok = err < 1e-5 and floor >= 0.5 - 1e-9 and ehr < 1e-5 and elapsed < 60
    report(6, ok, f"max|<q>-cos t|={err:.2e} (<1e-5), min dq*dp~={floor:.12f} (>=0.5-1e-9), "
                  f"Ehrenfest residual={ehr:.2e} (<1e-5), norm drift={rec.norm_drift:.1e}, {elapsed:.1f}s (<60s)")


# 7 --------------------------------------------------------------------------

def test_criterion_7_classical_sharpness(report):
    grid = PhaseGrid.of(("q", 256, -0.5, 0.5), ("p", 256, -0.5, 0.5))
    rep = build_representation(KVN, grid, params={"m": 1, "k": 1})
    st = gaussian_state(grid, {"q": 0, "p": 0}, {"q": 0.01, "p": 0.01})
    dq, dp, dpt = (uncertainty(st, s, rep) for s in (KVN.q(1), KVN.p(1), KVN.pt(1)))
    ok = dq * dp < 1e-3 and dq * dpt >= 0.5 - 1e-9
    report(7, ok, f"dq*dp={dq * dp:.3e} (<1e-3) while dq*dp~={dq * dpt:.12f} (>=0.5)")


# 8 --------------------------------------------------------------------------

def test_criterion_8_hybrid_leakage(report):
    th = build_theory(2, subset=(1,), parameters=("lam",))
    H = th.parse("p_1^2/2 + p_2^2/2 + q_1^2/2 + q_2^2/2 + lam*q_1*q_2")
    grid = PhaseGrid.of(("q_1", 64, -3, 3), ("p_1", 64, -3, 3), ("q_2", 64, -8, 8))
    spec = GaussianSpec({"q_1": 1.0, "p_1": 0.0, "q_2": 0.5}, {"q_1": 0.25, "p_1": 0.25, "q_2": math.sqrt(0.5)})
    lam = 0.1
    start = time.perf_counter()
    zero = hybrid_simulate(H, None, grid, spec, True, th, params={"lam": lam}, t_final=5.0)
    leak = hybrid_simulate(H, None, grid, spec, False, th, params={"lam": lam}, t_final=5.0, tilde_offset=0.5)
    elapsed = time.perf_counter() - start
    dev = zero.deviation("p_2")
    qt0 = leak.tilde["q_1~"][0]
    offset = leak.tilde["rate(p_2)"][0] - zero.reference["rate(p_2)"][0]
    leak_dev = leak.deviation("p_2")
    ok = dev < 2e-3 and abs(qt0 - 0.5) < 1e-9 and abs(offset - (-lam * 0.5)) < 1e-4 and elapsed < 600
    report(8, ok, f"zero-tilde max|<p_2>-ref|={dev:.2e} (<2e-3); <q_1~>(0)={qt0:.6f}, "
                  f"initial d<p_2>/dt offset={offset:.6f} vs {-lam * 0.5} (tol 1e-4), "
                  f"leaking run drifts {leak_dev:.3f} from ref; {elapsed:.0f}s (<600s)")


# 9 --------------------------------------------------------------------------

def test_criterion_9_alpha_independence(report):
    grid = PhaseGrid.of(("q", 128, -5, 5), ("p", 128, -5, 5))
    rep = build_representation(KVN, grid, params={"m": 1, "k": 1})
    st = gaussian_state(grid, {"q": 1, "p": 0}, {"q": 0.5, "p": 0.5})
    obs = [Expr.sym(KVN.q(1)), Expr.sym(KVN.p(1))]
    runs = [evolve(st, tilde_hamiltonian(HO, KVN, KVN.parse(a)), rep, 1e-3, 1000, observables=obs)
            for a in ("0", "-p^2/2 + q^2/4")]
    diff = max(float(np.max(np.abs(runs[0][n] - runs[1][n]))) for n in ("q", "p"))
    report(9, diff < 1e-8, f"alpha=0 vs alpha=-p^2/2+q^2/4: max |<q>,<p> difference| = {diff:.2e} (<1e-8)")
