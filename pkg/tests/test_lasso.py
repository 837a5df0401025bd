import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hdte._backend import get_kernel
from hdte.errors import ConvergenceError
from hdte.lasso import (
    PenaltyConfig,
    column_rms,
    fit_lasso_linear,
    fit_with_iterated_loadings,
    initial_loadings_linear,
    kkt_residual,
    lasso_objective,
    penalty_level,
    refit_post_lasso,
    solve_weighted_l1,
)

from oracles import conjugate_gradient, kahan_mean, lasso_oracle, normal_upper_quantile

# 11 * Phi^{-1}(0.9875) from bisection on erfc
LAMBDA_N100_P1 = 24.65543000365439


def sparse_problem(rng, n, p, s=3, noise=1.0):
    F = rng.standard_normal((n, p))
    beta = np.zeros(p)
    beta[:s] = 1.0
    return F, F @ beta + noise * rng.standard_normal(n), beta


def test_penalty_level_zero_at_half():
    assert penalty_level(37, 1, 0, 1.0 - 1e-15, 1.1) == pytest.approx(0.0, abs=1e-12)


def test_penalty_level_against_quantile_oracle():
    assert penalty_level(100, 1, 0, 0.025, 1.1) == pytest.approx(LAMBDA_N100_P1, rel=1e-12)


def test_penalty_level_default_gamma_and_du():
    n, p = 500, 40
    g = 0.1 / math.log(n)
    for d_u in (0, 1):
        expected = 1.1 * math.sqrt(n) * normal_upper_quantile(g / (2 * p * n ** d_u))
        assert penalty_level(n, p, d_u) == pytest.approx(expected, rel=1e-10)
    assert PenaltyConfig().lam(n, p) == pytest.approx(penalty_level(n, p), rel=1e-15)


def test_penalty_level_rejects_large_gamma():
    with pytest.raises(ValueError):
        penalty_level(10, 1, 0, 3.0)
    with pytest.raises(ValueError):
        PenaltyConfig(c=1.0)


def test_initial_loadings_constant_response_hits_floor(rng):
    F = rng.standard_normal((20, 3))
    got = initial_loadings_linear(np.full(20, 4.0), F)
    np.testing.assert_allclose(got, 1e-6 * column_rms(F))


def test_initial_loadings_hand_value():
    got = initial_loadings_linear(np.array([0.0, 2.0]), np.ones((2, 1)))
    assert got[0] == pytest.approx(1.0)


def test_initial_loadings_two_pass_oracle(rng):
    F = rng.standard_normal((50, 4))
    y = rng.standard_normal(50)
    ybar = kahan_mean(y)
    expected = [math.sqrt(kahan_mean(F[:, j] ** 2 * (y - ybar) ** 2)) for j in range(4)]
    np.testing.assert_allclose(initial_loadings_linear(y, F), expected, rtol=1e-12)


def test_unpenalized_columns_get_zero_loading(rng):
    F = rng.standard_normal((10, 3))
    assert initial_loadings_linear(rng.standard_normal(10), F, unpenalized=(1,))[1] == 0.0


def test_full_shrinkage(rng):
    F = rng.standard_normal((30, 5))
    y = rng.standard_normal(30)
    lam = 1.01 * 30 * np.max(np.abs(F.T @ y / 30))
    assert not np.any(fit_lasso_linear(F, y, lam, np.ones(5)))


def test_soft_threshold_closed_form(rng):
    f = rng.standard_normal(40)
    f /= np.sqrt(np.mean(f ** 2))
    y = 0.7 * f + rng.standard_normal(40)
    lam = 8.0
    rho = np.mean(f * y)
    expected = np.sign(rho) * max(abs(rho) - lam / 40, 0.0)
    got = fit_lasso_linear(f[:, None], y, lam, np.ones(1))
    assert got[0] == pytest.approx(expected, abs=1e-10)


def test_objective_matches_proximal_gradient_oracle():
    r = np.random.default_rng(7)
    F, y, _ = sparse_problem(r, 30, 6)
    lam, load = 4.0, np.ones(6)
    theta = fit_lasso_linear(F, y, lam, load, kkt_tol=1e-12)
    _, best = lasso_oracle(F, y, lam, load)
    assert abs(lasso_objective(F, y, theta, lam, load) - best) < 1e-8


@given(st.integers(5, 60), st.integers(1, 25), st.floats(0.05, 3.0), st.integers(0, 2**31 - 1))
def test_kkt_certificate(n, p, scale, seed):
    r = np.random.default_rng(seed)
    F = r.standard_normal((n, p))
    y = F[:, 0] + r.standard_normal(n)
    load = r.uniform(0.3, 2.0, p)
    lam = scale * math.sqrt(n)
    theta = fit_lasso_linear(F, y, lam, load)
    score = F.T @ (y - F @ theta) / n
    assert kkt_residual(score, theta, lam / n * load) <= 1e-7


def test_sweeps_never_increase_objective(rng):
    F, y, _ = sparse_problem(rng, 40, 15)
    Ff = np.asfortranarray(F)
    n, p = F.shape
    lam, load = 3.0, np.ones(p)
    thresh = lam / n * load
    beta = np.zeros(p)
    r = y.copy()
    colsq = np.mean(F ** 2, axis=0)
    idx = np.arange(p, dtype=np.intp)
    kernel = get_kernel("python")
    prev = lasso_objective(F, y, beta, lam, load)
    for _ in range(30):
        kernel(Ff, np.ones(n), r, beta, thresh, colsq, idx, 1, 0.0)
        cur = lasso_objective(F, y, beta, lam, load)
        assert cur <= prev + 1e-14
        prev = cur


@given(st.floats(0.2, 5.0), st.integers(0, 2**31 - 1))
def test_column_scale_equivariance(a, seed):
    r = np.random.default_rng(seed)
    F, y, _ = sparse_problem(r, 40, 6)
    load = r.uniform(0.5, 1.5, 6)
    lam = 5.0
    fit1 = F @ fit_lasso_linear(F, y, lam, load, kkt_tol=1e-11)
    F2, load2 = F.copy(), load.copy()
    F2[:, 2] *= a
    load2[2] *= a
    fit2 = F2 @ fit_lasso_linear(F2, y, lam, load2, kkt_tol=1e-11)
    np.testing.assert_allclose(fit1, fit2, atol=1e-7)


def test_convergence_error_carries_residual(rng):
    F, y, _ = sparse_problem(rng, 50, 20)
    with pytest.raises(ConvergenceError) as info:
        fit_lasso_linear(F, y, 1.0, np.ones(20), kkt_tol=1e-14, max_sweeps=1)
    assert info.value.residual > 1e-14


def test_refit_empty_support(rng):
    F = rng.standard_normal((5, 3))
    res = refit_post_lasso(F, rng.standard_normal(5), [])
    assert not np.any(res.theta) and not res.flag


def test_refit_square_design_interpolates(rng):
    F = rng.standard_normal((4, 4))
    y = rng.standard_normal(4)
    res = refit_post_lasso(F, y, range(4))
    np.testing.assert_allclose(F @ res.theta, y, atol=1e-12)


def test_refit_matches_conjugate_gradient(rng):
    F = rng.standard_normal((40, 10))
    y = rng.standard_normal(40)
    supp = [1, 4, 5, 8]
    res = refit_post_lasso(F, y, supp)
    X = F[:, supp]
    np.testing.assert_allclose(res.theta[supp], conjugate_gradient(X.T @ X, X.T @ y), rtol=1e-10)
    assert np.all(np.delete(res.theta, supp) == 0)
    assert np.max(np.abs(X.T @ (y - F @ res.theta))) <= 1e-10 * np.linalg.norm(X.T @ y)


def test_refit_drops_dependent_columns(rng):
    F = rng.standard_normal((10, 3))
    F[:, 2] = F[:, 0] - F[:, 1]
    res = refit_post_lasso(F, rng.standard_normal(10), [0, 1, 2])
    assert res.flag and res.dropped == (2,)


def test_iterated_k1_is_one_lasso_and_refit(rng):
    F, y, _ = sparse_problem(rng, 60, 10)
    cfg = PenaltyConfig(K=1)
    fit = fit_with_iterated_loadings(F, y, cfg)
    load = initial_loadings_linear(y, F)
    theta = fit_lasso_linear(F, y, fit.lam, load)
    assert fit.iterations_used == 1
    np.testing.assert_allclose(fit.loadings, load)
    np.testing.assert_allclose(fit.theta_lasso, theta, atol=1e-9)
    np.testing.assert_allclose(fit.theta_post, refit_post_lasso(F, y, np.flatnonzero(theta)).theta,
                               atol=1e-9)


def test_iterated_stops_at_fixed_point(rng):
    F = rng.standard_normal((30, 4))
    fit = fit_with_iterated_loadings(F, np.zeros(30))
    assert fit.iterations_used == 1 and fit.loadings_converged


def test_iterated_loadings_converge_on_sparse_model():
    r = np.random.default_rng(11)
    F, y, beta = sparse_problem(r, 200, 50)
    fit = fit_with_iterated_loadings(F, y)
    assert fit.loadings_converged and fit.iterations_used <= 15
    assert set(fit.support) == {0, 1, 2}
    assert np.all(fit.loadings > 0)
    doc = json.loads(fit.to_json())
    assert doc["support"] == [0, 1, 2] and doc["lam"] == pytest.approx(fit.lam)


def test_unpenalized_intercept_is_always_refit(rng):
    F = np.column_stack([np.ones(80), rng.standard_normal((80, 5))])
    y = 3.0 + rng.standard_normal(80)
    fit = fit_with_iterated_loadings(F, y, unpenalized=(0,))
    assert fit.theta_post[0] == pytest.approx(np.mean(y - F[:, 1:] @ fit.theta_post[1:]))


def test_weighted_solver_reports_kkt(rng):
    F = np.asfortranarray(rng.standard_normal((25, 6)))
    w = rng.uniform(0.1, 1.0, 25)
    y = rng.standard_normal(25)
    beta = np.zeros(6)
    r = y.copy()
    thresh = np.full(6, 0.05)
    _, kkt = solve_weighted_l1(F, w, r, beta, thresh, kkt_tol=1e-10)
    score = F.T @ (w * (y - F @ beta)) / 25
    assert kkt <= 1e-10
    assert kkt_residual(score, beta, thresh) <= 1e-10
