import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import optimize

from selfcons_gp.datagen import CnnArch, QuadArch, make_cnn_dataset, make_quad_dataset, sample_inputs
from selfcons_gp.gp import fit_gp
from selfcons_gp.kernels import ek_parameters, gram, spec_for
from selfcons_gp.saddle import (SaddleConfig, analytic_q_train, ek_alpha_pole, ek_alpha_rhs, ek_alpha_solve,
                                ek_quad_asymptotics, estimate_q_empirical, fixed_point_map, predict_test,
                                quad_beta_relation, quad_ek_residual, solve_saddle)


@pytest.fixture(scope="module")
def cnn_problem():
    arch = CnnArch(4, 4, 8)
    ds, _ = make_cnn_dataset(arch.with_channels(1), 20, seed=3)
    Xt = sample_inputs(10, arch.d, seed=4)
    return arch, ds, Xt


def test_ek_alpha_infinite_width():
    # GP limit: alpha = eta / (lam + eta)
    sol = ek_alpha_solve(1 / 900, 200, 1.0, math.inf, 1.0)
    assert sol.alpha_train == pytest.approx((1 / 200) / (1 / 900 + 1 / 200), rel=1e-12)
    assert sol.alpha_train == pytest.approx(0.81818, abs=1e-5)


def test_analytic_q_train_values():
    a, q = analytic_q_train(1 / 900, 200, 1.0)
    assert a == pytest.approx(0.559540, abs=1e-5)
    assert q == pytest.approx(2.42253, abs=1e-4)


def test_ek_solver_rejects_bad_inputs():
    with pytest.raises(ValueError):
        ek_alpha_solve(-1.0, 10, 1.0, 4)
    with pytest.raises(ValueError):
        ek_alpha_solve(0.1, 10, 1.0, 4, q_train=-1.0)


def test_ek_pole():
    assert ek_alpha_pole(0.01, 100, 1.0, 4) == pytest.approx(0.01 * 20)
    assert math.isinf(ek_alpha_pole(0.01, 100, 1.0, math.inf))


def test_estimate_q_empirical_roundtrip():
    g = np.array([1.0, 2.0, -1.0])
    lam, n, s2 = 0.02, 50, 1.0
    q = estimate_q_empirical(0.4 * g, g, lam, n, s2)
    assert q == pytest.approx(0.4 * (lam + s2 / n) / lam)


@given(lam=st.floats(1e-4, 0.1), n=st.integers(5, 2000), C=st.floats(1.0, 1e4), q=st.floats(0.2, 3.0))
def test_ek_root_satisfies_equation(lam, n, C, q):
    sol = ek_alpha_solve(lam, n, 1.0, C, q)
    if not sol.converged:
        assert not sol.branch_report["roots"]
        return
    assert 0 <= sol.alpha_train < sol.alpha_pole
    assert sol.alpha_train == pytest.approx(float(ek_alpha_rhs(sol.alpha_train, lam, n, 1.0, C, q)), abs=1e-10)


@given(lam=st.floats(1e-3, 0.1), n=st.integers(5, 500))
def test_ek_approaches_gp_as_width_grows(lam, n):
    a_inf = ek_alpha_solve(lam, n, 1.0, math.inf).alpha_train
    a_big = ek_alpha_solve(lam, n, 1.0, 1e9).alpha_train
    assert a_big == pytest.approx(a_inf, abs=1e-5)


def test_plain_gp_matches_fit_gp(cnn_problem):
    arch, ds, Xt = cnn_problem
    sol = solve_saddle(arch, ds.X, ds.g, 0.5, X_test=Xt, cumulants=False)
    ref = fit_gp(gram(spec_for(arch), ds.X), ds.g, 0.5)
    assert np.allclose(sol.dual, ref.alpha_weights, rtol=1e-12)
    assert np.allclose(sol.shift.train, 0.0)


@pytest.mark.parametrize("method", ["newton_krylov", "newton", "damped_fixed_point"])
def test_saddle_fixed_point(cnn_problem, method):
    arch, ds, Xt = cnn_problem
    sol = solve_saddle(arch, ds.X, ds.g, 0.5, SaddleConfig(method=method, max_iter=2000), X_test=Xt)
    assert sol.converged
    K = gram(spec_for(arch), ds.X)
    lhs = (K + 0.5 * np.eye(K.shape[0])) @ sol.dual
    assert np.allclose(lhs, ds.g - sol.shift.train, atol=1e-8)
    assert np.allclose(fixed_point_map(sol), sol.discrepancies.values, atol=1e-8)
    assert np.allclose(predict_test(sol, Xt), sol.test_mean)


def test_methods_agree(cnn_problem):
    arch, ds, _ = cnn_problem
    duals = [solve_saddle(arch, ds.X, ds.g, 0.5, SaddleConfig(method=m, max_iter=2000)).dual
             for m in ("newton_krylov", "newton", "damped_fixed_point")]
    assert np.allclose(duals[0], duals[1], atol=1e-8)
    assert np.allclose(duals[0], duals[2], atol=1e-7)


def test_wide_network_reduces_to_gp(cnn_problem):
    arch, ds, _ = cnn_problem
    gp = solve_saddle(arch, ds.X, ds.g, 0.5, cumulants=False).dual
    gaps = [np.linalg.norm(solve_saddle(arch.with_channels(C), ds.X, ds.g, 0.5).dual - gp) for C in (100, 1000)]
    assert gaps[1] < gaps[0] / 5


def test_annealing_schedule():
    cfg = SaddleConfig(anneal_start=1.0, anneal_stages=4)
    assert cfg.schedule(1e-3) == pytest.approx([1.0, 0.1, 0.01, 1e-3])
    assert cfg.schedule(2.0) == [2.0]
    assert SaddleConfig(annealing=[1.0, 0.5]).schedule(0.1) == [1.0, 0.5, 0.1]
    with pytest.raises(ValueError):
        SaddleConfig(method="bfgs")
    with pytest.raises(ValueError):
        SaddleConfig(damping=0.0)


def test_quad_saddle_annealed():
    arch = QuadArch(6, 24)
    ds, _ = make_quad_dataset(arch, 24, seed=2)
    sol = solve_saddle(arch, ds.X, ds.g, 1e-3, SaddleConfig(anneal_stages=8))
    assert sol.converged
    assert len(sol.anneal_trace) == 8
    K = gram(spec_for(arch), ds.X)
    assert np.allclose((K + 1e-3 * np.eye(24)) @ sol.dual, ds.g - sol.shift.train, atol=1e-7)


def test_solver_input_validation(cnn_problem):
    arch, ds, _ = cnn_problem
    with pytest.raises(ValueError):
        solve_saddle(arch, ds.X, ds.g[:-1], 1.0)
    with pytest.raises(ValueError):
        solve_saddle(arch, ds.X, ds.g, 0.0)


def test_quad_ek_roots_solve_printed_system():
    d = 100
    arch = QuadArch(d, 1)
    p = ek_parameters(arch)
    n = 1e4 / p.lam0
    sol = ek_quad_asymptotics(p.lam0, p.lam2, n, 1.0, d)
    assert sol.converged
    for a, b in sol.roots:
        # independent 2-D solve started at each reported root
        ref = optimize.fsolve(lambda z: quad_ek_residual(z[0], z[1], p.lam0, p.lam2, n, 1.0, d), [a * 1.01, b],
                              xtol=1e-13)
        assert ref == pytest.approx([a, b], rel=1e-7)
    assert sol.alpha_asymptote == pytest.approx(5 / 18 * 1e-4)


def test_quad_ek_exact_form_residual():
    d = 30
    p = ek_parameters(QuadArch(d, 1))
    n = 500 / p.lam0
    sol = ek_quad_asymptotics(p.lam0, p.lam2, n, 1.0, d, form="exact")
    assert sol.converged
    r = quad_ek_residual(sol.alpha, sol.beta, p.lam0, p.lam2, n, 1.0, d, form="exact")
    assert max(map(abs, r)) < 1e-8
    with pytest.raises(ValueError):
        ek_quad_asymptotics(p.lam0, p.lam2, n, 1.0, d, form="guess")


def test_quad_beta_relation():
    assert quad_beta_relation(0.0, 1.0, 10, 1.0, 5) == pytest.approx(0.05)
