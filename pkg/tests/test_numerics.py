import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from kvnlab.algebra import Expr
from kvnlab.deconjugation import build_theory, tilde_hamiltonian
from kvnlab.numerics import (
    Axis,
    GaussianSpec,
    GridError,
    InstabilityError,
    PhaseGrid,
    RepresentationError,
    build_representation,
    commutator_residual,
    ehrenfest_residual,
    evolve,
    expectation,
    gaussian_state,
    hybrid_simulate,
    random_smooth_states,
    uncertainty,
)

KVN = build_theory(1, subset=(1,), parameters=("m", "k"))
Q, P, QT, PT = KVN.q(1), KVN.p(1), KVN.qt(1), KVN.pt(1)


def ho_setup(n=64, L=5.0):
    grid = PhaseGrid.of(("q", n, -L, L), ("p", n, -L, L))
    rep = build_representation(KVN, grid, params={"m": 1, "k": 1})
    Ht = tilde_hamiltonian(KVN.parse("p^2/(2*m) + k*q^2/2"), KVN)
    return grid, rep, Ht


# -- grid -----------------------------------------------------------------------

@pytest.mark.parametrize("args", [("q", 100, -1, 1), ("q", 64, 1, 1), ("q", 64, 2, 1), ("q", 0, -1, 1)])
def test_bad_axes(args):
    with pytest.raises(GridError):
        Axis(*args)


def test_grid_limits():
    with pytest.raises(GridError):
        PhaseGrid.of(("a", 8, 0, 1), ("b", 8, 0, 1), ("c", 8, 0, 1), ("d", 8, 0, 1))
    with pytest.raises(GridError):
        PhaseGrid.of(("a", 8, 0, 1), ("a", 8, 0, 1))
    with pytest.raises(GridError):
        PhaseGrid.of(("a", 1024, 0, 1), ("b", 1024, 0, 1), ("c", 8, 0, 1))
    g = PhaseGrid.of(("q", 8, -1, 1))
    assert g.axes[0].spacing == 0.25
    assert g.axes[0].coords()[0] == -1 and g.axes[0].coords()[-1] == 0.75


def test_gaussian_margin_and_axes():
    g = PhaseGrid.of(("q", 64, -2, 2), ("p", 64, -2, 2))
    with pytest.raises(GridError, match="boundary"):
        gaussian_state(g, {"q": 1.5, "p": 0}, {"q": 0.3, "p": 0.3})
    with pytest.raises(GridError):
        gaussian_state(g, {"x": 0}, {"q": 0.3, "p": 0.3})


def test_gaussian_moments():
    grid, rep, _ = ho_setup(128)
    st = gaussian_state(grid, {"q": 0, "p": 0}, {"q": 0.5, "p": 0.7})
    assert abs(st.norm() - 1) < 1e-12
    assert abs(expectation(st, Expr.sym(Q), rep)) < 1e-10
    assert abs(uncertainty(st, Q, rep) - 0.5) < 1e-8
    assert abs(uncertainty(st, P, rep) - 0.7) < 1e-8
    # minimum-uncertainty pair in the (q, p~) plane
    assert abs(uncertainty(st, Q, rep) * uncertainty(st, PT, rep) - 0.5) < 1e-9
    assert abs(uncertainty(st, QT, rep) * uncertainty(st, P, rep) - 0.5) < 1e-9


def test_phase_gradient_sets_tilde_mean():
    grid, rep, _ = ho_setup(128)
    st = gaussian_state(grid, {"q": 0, "p": 0}, {"q": 0.5, "p": 0.5}, {"q": 1.5, "p": -0.25})
    # p~ = -i d_q gives the gradient along q; q~ = +i d_p gives minus the gradient along p
    assert abs(expectation(st, Expr.sym(PT), rep) - 1.5) < 1e-9
    assert abs(expectation(st, Expr.sym(QT), rep) - 0.25) < 1e-9


def test_joint_sharpness_of_q_and_p():
    grid = PhaseGrid.of(("q", 256, -0.5, 0.5), ("p", 256, -0.5, 0.5))
    rep = build_representation(KVN, grid, params={"m": 1, "k": 1})
    st = gaussian_state(grid, {"q": 0, "p": 0}, {"q": 0.01, "p": 0.01})
    dq, dp, dpt = (uncertainty(st, s, rep) for s in (Q, P, PT))
    assert abs(dq * dp - 1e-4) < 1e-10
    assert dq * dpt >= 0.5 - 1e-9


# -- representation -------------------------------------------------------------

def test_commutators_on_gaussian():
    grid, rep, _ = ho_setup(128)
    # tails must reach round-off inside the box for spectral accuracy
    psi = gaussian_state(grid, {"q": 0.3, "p": -0.2}, {"q": 0.4, "p": 0.4}).psi
    assert commutator_residual(rep, Q, PT, psi) < 1e-10
    assert commutator_residual(rep, QT, P, psi) < 1e-10
    # both diagonal: only round-off survives
    assert commutator_residual(rep, Q, P, psi) < 1e-15
    assert commutator_residual(rep, QT, PT, psi) < 1e-12


def test_every_relation_on_random_states():
    grid, rep, _ = ho_setup(64)
    syms = KVN.all_symbols()
    for psi in random_smooth_states(grid, 10, seed=3):
        for i, a in enumerate(syms):
            for b in syms[i + 1:]:
                assert commutator_residual(rep, a, b, psi) < 1e-8


def test_hybrid_commutators():
    th = build_theory(2, subset=(1,))
    grid = PhaseGrid.of(("q_1", 64, -3, 3), ("p_1", 64, -3, 3), ("q_2", 64, -8, 8))
    rep = build_representation(th, grid)
    syms = th.all_symbols()
    for psi in random_smooth_states(grid, 3, seed=1):
        assert commutator_residual(rep, th.q(2), th.p(2), psi) < 1e-8
        for i, a in enumerate(syms):
            for b in syms[i + 1:]:
                assert commutator_residual(rep, a, b, psi) < 1e-8


def test_representation_mismatch():
    grid = PhaseGrid.of(("q", 16, -1, 1))
    with pytest.raises(RepresentationError):
        build_representation(KVN, grid)
    grid, rep, _ = ho_setup(16)
    with pytest.raises(RepresentationError):
        rep.with_params(k=None).compile(KVN.parse("k*q"))


def test_fft_pairs_for_liouvillian():
    _, rep, Ht = ho_setup(16)
    assert rep.compile(Ht).fft_pairs == 2


# -- evolution ------------------------------------------------------------------

def test_free_particle_drift():
    grid = PhaseGrid.of(("q", 64, -6, 6), ("p", 64, -3, 3))
    rep = build_representation(KVN, grid, params={"m": 2, "k": 0})
    Ht = tilde_hamiltonian(KVN.parse("p^2/(2*m)"), KVN)
    st = gaussian_state(grid, {"q": -1, "p": 0.5}, {"q": 0.3, "p": 0.3})
    rec = evolve(st, Ht, rep, 0.01, 100, observables=[Expr.sym(Q), Expr.sym(P)])
    assert np.max(np.abs(rec["q"] - (-1 + 0.5 * rec.times / 2))) < 1e-8
    assert np.max(np.abs(rec["p"] - 0.5)) < 1e-10
    assert rec.norm_drift < 1e-9


def test_oscillator_quarter_period():
    grid, rep, Ht = ho_setup(64)
    st = gaussian_state(grid, {"q": 1, "p": 0}, {"q": 0.4, "p": 0.4})
    steps = 400
    dt = (math.pi / 2) / steps
    rec = evolve(st, Ht, rep, dt, steps, observables=[Expr.sym(Q), Expr.sym(P)], uncertainties=[Q, PT])
    assert np.max(np.abs(rec["q"] - np.cos(rec.times))) < 1e-6
    assert np.max(np.abs(rec["p"] + np.sin(rec.times))) < 1e-6
    assert np.min(rec["sd(q)"] * rec["sd(p~)"]) >= 0.5 - 1e-9
    assert rec.norm_drift < 1e-9


def _ensemble_mean_q(force, center, sigma, t_eval, nodes=12):
    """<q>(t) of the Liouville flow from a Gaussian density, by Gauss-Hermite quadrature."""
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    w = w / w.sum()
    q0 = (center[0] + sigma[0] * x)[:, None] * np.ones(nodes)
    p0 = np.ones(nodes)[:, None] * (center[1] + sigma[1] * x)
    W = w[:, None] * w[None, :]
    n = q0.size

    def rhs(t, y):
        return np.concatenate([y[n:], force(y[:n])])

    sol = solve_ivp(rhs, (0, t_eval[-1]), np.concatenate([q0.ravel(), p0.ravel()]), t_eval=t_eval,
                    method="DOP853", rtol=1e-12, atol=1e-12)
    return (W.ravel()[:, None] * sol.y[:n]).sum(axis=0)


@pytest.mark.slow
def test_quartic_tracks_the_classical_ensemble():
    th = KVN
    # the packet shears into a thin filament within one period; 256 points resolve it
    grid = PhaseGrid.of(("q", 256, -1.35, 1.35), ("p", 256, -1.05, 1.05))
    rep = build_representation(th, grid, params={"m": 1, "k": 0})
    Ht = tilde_hamiltonian(th.parse("p^2/(2*m) + q^4/4"), th)
    sig = 0.05
    st = gaussian_state(grid, {"q": 1, "p": 0}, {"q": sig, "p": sig})
    # period of q'' = -q^3 from q=1 at rest
    period = 4 * math.sqrt(2) * math.gamma(0.25) ** 2 / (4 * math.sqrt(2 * math.pi))
    steps = 8000
    rec = evolve(st, Ht, rep, period / steps, steps, observables=[Expr.sym(Q)])
    t = rec.times[::200]
    oracle = _ensemble_mean_q(lambda q: -q ** 3, (1.0, 0.0), (sig, sig), t)
    assert np.max(np.abs(rec["q"][::200] - oracle)) < 1e-4
    assert rec.norm_drift < 1e-9


def test_ehrenfest_second_order():
    grid, rep, Ht = ho_setup(64)
    st = gaussian_state(grid, {"q": 1, "p": 0}, {"q": 0.4, "p": 0.4})
    res = []
    for dt in (0.02, 0.01):
        rec = evolve(st, Ht, rep, dt, int(round(1 / dt)), ehrenfest=[Expr.sym(Q)])
        res.append(ehrenfest_residual(rec, Expr.sym(Q)))
    assert 3.6 <= res[0] / res[1] <= 4.4


def test_ehrenfest_identity_and_generator():
    grid, rep, Ht = ho_setup(64)
    st = gaussian_state(grid, {"q": 1, "p": 0.5}, {"q": 0.4, "p": 0.4}, {"q": 0.3})
    rec = evolve(st, Ht, rep, 1e-3, 200, ehrenfest=[Expr.const(1), Ht])
    assert ehrenfest_residual(rec, Expr.const(1)) < 1e-12
    assert ehrenfest_residual(rec, Ht) < 1e-8


def test_instability_is_refused():
    grid, rep, Ht = ho_setup(64)
    st = gaussian_state(grid, {"q": 1, "p": 0}, {"q": 0.4, "p": 0.4})
    with pytest.raises(InstabilityError, match="stability bound"):
        evolve(st, Ht, rep, 1.0, 5)


def test_default_dt_is_stable():
    grid, rep, Ht = ho_setup(32)
    st = gaussian_state(grid, {"q": 1, "p": 0}, {"q": 0.6, "p": 0.6})
    rec = evolve(st, Ht, rep, None, 20)
    assert rec.dt == pytest.approx(0.5 / rec.meta["spectral_radius"])
    assert rec.norm_drift < 1e-9


def test_csv_output(tmp_path):
    grid, rep, Ht = ho_setup(32)
    st = gaussian_state(grid, {"q": 1, "p": 0}, {"q": 0.6, "p": 0.6})
    rec = evolve(st, Ht, rep, 0.01, 3, observables={"x": Expr.sym(Q)}, uncertainties=[Q])
    text = rec.to_csv(tmp_path / "r.csv").read_text().splitlines()
    assert text[0] == "t,x,sd(q),norm"
    assert len(text) == 5
    row = text[2].split(",")
    assert float(row[0]) == 0.01
    assert len(row[1].replace("-", "").replace(".", "").split("e")[0]) >= 15
    dat = rec.to_plot_data(tmp_path / "r.dat").read_text().splitlines()
    assert dat[0] == "# t x sd(q) norm"


def test_density_follows_characteristics():
    grid = PhaseGrid.of(("q", 256, -4, 4), ("p", 256, -4, 4))
    rep = build_representation(KVN, grid, params={"m": 1, "k": 1})
    Ht = tilde_hamiltonian(KVN.parse("p^2/(2*m) + k*q^2/2"), KVN)
    c, s = (1.0, 0.5), (0.5, 0.35)
    st = gaussian_state(grid, {"q": c[0], "p": c[1]}, {"q": s[0], "p": s[1]})
    T = 0.5
    rec = evolve(st, Ht, rep, 2e-3, 250, keep_state=True)
    rho = rec.meta["final_state"].density()
    # backward characteristics of the harmonic flow are a rotation
    q, p = grid.coordinate("q"), grid.coordinate("p")
    q0 = q * math.cos(T) - p * math.sin(T)
    p0 = q * math.sin(T) + p * math.cos(T)
    rho0 = np.exp(-(q0 - c[0]) ** 2 / (2 * s[0] ** 2) - (p0 - c[1]) ** 2 / (2 * s[1] ** 2)) / (2 * math.pi * s[0] * s[1])
    assert np.max(np.abs(rho - rho0)) / rho0.max() < 1e-3
    assert np.min(rho) >= 0


# -- hybrid ---------------------------------------------------------------------

HY = build_theory(2, subset=(1,), parameters=("lam",))
HY_H = HY.parse("p_1^2/2 + p_2^2/2 + q_1^2/2 + q_2^2/2 + lam*q_1*q_2")
HY_SPEC = GaussianSpec({"q_1": 1.0, "p_1": 0.0, "q_2": 0.5}, {"q_1": 0.25, "p_1": 0.25, "q_2": math.sqrt(0.5)})


def _hy_grid(n=32):
    return PhaseGrid.of(("q_1", n, -3, 3), ("p_1", n, -3, 3), ("q_2", n, -8, 8))


def test_hybrid_zero_tilde_matches_reference():
    r = hybrid_simulate(HY_H, None, _hy_grid(), HY_SPEC, True, HY, params={"lam": 0.1}, t_final=1.0)
    assert abs(r.tilde["q_1~"][0]) < 1e-10
    assert r.deviation("p_2") < 2e-3
    assert r.tilde.norm_drift < 1e-9


def test_hybrid_tilde_offset_shifts_force():
    grid = _hy_grid(32)
    kw = dict(params={"lam": 0.1}, steps=2, dt=1e-3, reference=False)
    a = hybrid_simulate(HY_H, None, grid, HY_SPEC, True, HY, **kw)
    b = hybrid_simulate(HY_H, None, grid, HY_SPEC, False, HY, **kw)
    assert abs(b.tilde["q_1~"][0] - 0.5) < 1e-9
    offset = b.tilde["rate(p_2)"][0] - a.tilde["rate(p_2)"][0]
    assert abs(offset - (-0.1 * 0.5)) < 1e-4


def test_hybrid_uncoupled_runs_agree():
    grid = _hy_grid(16)
    H0 = HY.parse("p_1^2/2 + p_2^2/2 + q_1^2/2 + q_2^2/2")
    kw = dict(params={"lam": 0.0}, steps=100, dt=5e-3)
    a = hybrid_simulate(HY_H, None, grid, HY_SPEC, True, HY, **kw)
    b = hybrid_simulate(HY_H, None, grid, HY_SPEC, False, HY, **kw)
    c = hybrid_simulate(H0, None, grid, HY_SPEC, True, HY, **kw)
    for name in ("q_2", "p_2"):
        assert np.max(np.abs(a.tilde[name] - b.tilde[name])) < 1e-8
        assert np.max(np.abs(a.tilde[name] - c.tilde[name])) < 1e-8
        assert a.deviation(name) < 1e-8


def test_hybrid_rejects_momentum_coupling():
    from kvnlab.dynamics import DecouplingError

    H = HY.parse("p_1^2/2 + p_2^2/2 + lam*q_1*p_2")
    with pytest.raises(DecouplingError):
        hybrid_simulate(H, None, _hy_grid(16), HY_SPEC, True, HY, params={"lam": 0.1}, steps=1, dt=1e-3)


def test_alpha_leaves_expectations_alone():
    grid, rep, _ = ho_setup(64)
    H = KVN.parse("p^2/(2*m) + k*q^2/2")
    st = gaussian_state(grid, {"q": 1, "p": 0}, {"q": 0.4, "p": 0.4})
    runs = []
    for alpha in ("0", "-p^2/2", "q*p/3"):
        Ht = tilde_hamiltonian(H, KVN, KVN.parse(alpha))
        runs.append(evolve(st, Ht, rep, 2e-3, 250, observables=[Expr.sym(Q), Expr.sym(P)]))
    for other in runs[1:]:
        for name in ("q", "p"):
            assert np.max(np.abs(other[name] - runs[0][name])) < 1e-8
