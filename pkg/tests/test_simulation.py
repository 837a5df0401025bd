import json
import math

import numpy as np
import pytest

from hdte.errors import ConfigError
from hdte.lasso import PenaltyConfig
from hdte.simulation import (
    OutcomeFit,
    SimConfig,
    coef_scales,
    gen_dgp,
    naive_ate,
    orthogonal_ate,
    run_size_experiment,
    theta0,
    toeplitz_cov,
    true_ate,
    with_const,
)

# theta0' Sigma theta0 for p = 250 by an explicit double sum
QUAD_P250 = 1.4694338772048334


def test_toeplitz_entries():
    S = toeplitz_cov(5)
    assert S[0, 2] == 0.25 and S[3, 3] == 1.0 and S[4, 0] == 0.0625


def test_coef_scales_against_double_sum():
    th, S = theta0(250), toeplitz_cov(250)
    assert float(th @ S @ th) == pytest.approx(QUAD_P250, rel=1e-13)
    c_d, c_y = coef_scales(0.5, 0.5, th, S)
    assert c_d == pytest.approx(math.sqrt(math.pi ** 2 / 3) / math.sqrt(QUAD_P250), rel=1e-13)
    assert c_y == pytest.approx(1 / math.sqrt(QUAD_P250), rel=1e-13)
    assert coef_scales(0.0, 0.0, th, S) == (0.0, 0.0)
    with pytest.raises(ValueError):
        coef_scales(1.0, 0.0, th, S)


def test_null_cell_design():
    cfg = SimConfig(n=20000, p=5)
    y, d, x = gen_dgp(cfg, (0.0, 0.0), [1, 2])
    assert abs(d.mean() - 0.5) < 4 * 0.5 / math.sqrt(cfg.n)
    assert abs(np.corrcoef(y, d)[0, 1]) < 4 / math.sqrt(cfg.n)
    assert true_ate((0.0, 0.0), cfg) == 0.0


def test_covariate_correlation():
    y, d, x = gen_dgp(SimConfig(n=100_000, p=3), (0.3, 0.3), 0)
    assert abs(np.corrcoef(x[:, 0], x[:, 1])[0, 1] - 0.5) < 0.01


def test_dgp_is_reproducible():
    cfg = SimConfig(n=50, p=10)
    a = gen_dgp(cfg, (0.5, 0.5), [0, 1, 2, 3])
    b = gen_dgp(cfg, (0.5, 0.5), [0, 1, 2, 3])
    for u, v in zip(a, b):
        assert u.tobytes() == v.tobytes()


def fixed_outcome(F, d, b0, b1):
    p = F.shape[1]
    Fz = np.hstack([(1 - d)[:, None] * F, d[:, None] * F])
    zero = np.zeros_like(F)
    theta = np.concatenate([b0, b1])
    return OutcomeFit(F @ b0, F @ b1, theta, Fz, np.hstack([zero, F]), np.hstack([F, zero]), None)


def test_naive_equal_arms_gives_zero(rng):
    F = with_const(rng.standard_normal((30, 3)))
    d = rng.integers(0, 2, 30).astype(float)
    b = rng.standard_normal(4)
    est, se, _ = naive_ate(F, rng.standard_normal(30), d, outcome=fixed_outcome(F, d, b, b))
    assert est == pytest.approx(0.0, abs=1e-15)


def test_naive_brute_force_toy():
    r = np.random.default_rng(10)
    n = 10
    F = with_const(r.standard_normal((n, 2)))
    d = np.array([0, 1] * 5, dtype=float)
    y = r.standard_normal(n)
    b0, b1 = r.standard_normal(3), r.standard_normal(3)
    o = fixed_outcome(F, d, b0, b1)
    est, se, flag = naive_ate(F, y, d, outcome=o)
    diff = [sum(F[i, k] * (b1[k] - b0[k]) for k in range(3)) for i in range(n)]
    assert est == pytest.approx(sum(diff) / n, abs=1e-14)
    assert est == pytest.approx(F.mean(axis=0) @ (b1 - b0), abs=1e-14)
    # sandwich by explicit sums
    X = o.Fz
    e = y - X @ o.theta
    a = np.concatenate([-F.mean(axis=0), F.mean(axis=0)])
    XtX = sum(np.outer(X[i], X[i]) for i in range(n))
    meat = sum(e[i] ** 2 * np.outer(X[i], X[i]) for i in range(n))
    inv = np.linalg.inv(XtX)
    var = a @ inv @ meat @ inv @ a + np.var(diff) / n
    assert se == pytest.approx(math.sqrt(var), rel=1e-10)
    assert not flag


def test_orthogonal_collapses_to_ipw_difference(rng):
    n = 40
    F = with_const(rng.standard_normal((n, 2)))
    d = rng.integers(0, 2, n).astype(float)
    y = rng.standard_normal(n)
    zero = np.zeros(3)
    est, se, _ = orthogonal_ate(F, y, d, outcome=fixed_outcome(F, d, zero, zero),
                                propensity=(np.full(n, 0.5), 0, None))
    assert est == pytest.approx(2 * (np.mean(d * y) - np.mean((1 - d) * y)), abs=1e-14)


def test_orthogonal_doubly_robust_hand_formula():
    d = np.array([1, 1, 0, 0, 1, 0], dtype=float)
    y = np.array([2.0, 3.0, 1.0, -1.0, 4.0, 0.5])
    F = np.column_stack([np.ones(6), [0, 1, 0, 1, 1, 0]])
    b0, b1 = np.array([0.2, 0.1]), np.array([1.5, 1.0])
    m = np.array([0.6, 0.5, 0.4, 0.5, 0.5, 0.6])
    est, _, _ = orthogonal_ate(F, y, d, outcome=fixed_outcome(F, d, b0, b1),
                               propensity=(m, 0, None))
    g1, g0 = F @ b1, F @ b0
    by_hand = sum(d[i] * (y[i] - g1[i]) / m[i] + g1[i]
                  - (1 - d[i]) * (y[i] - g0[i]) / (1 - m[i]) - g0[i] for i in range(6)) / 6
    assert est == pytest.approx(by_hand, abs=1e-14)


def test_null_cell_estimators_unbiased():
    cfg = SimConfig(n=200, p=30, r2_d=(0.0,), r2_y=(0.0,), reps=80, seed=4)
    t = run_size_experiment(cfg)
    for e in ("orthogonal", "naive"):
        x = t.estimates[e][0, 0]
        x = x[np.isfinite(x)]
        assert abs(x.mean()) <= 3 * x.std(ddof=1) / math.sqrt(x.size)


def test_size_table_contract(tmp_path):
    cfg = SimConfig(n=100, p=20, r2_d=(0.0, 0.5), r2_y=(0.5,), reps=6, seed=1,
                    penalty=PenaltyConfig())
    t = run_size_experiment(cfg)
    for e in t.ESTIMATORS:
        f = t.reject[e]
        assert np.all((f >= 0) & (f <= 1))
        np.testing.assert_allclose(t.mc_se[e], np.sqrt(f * (1 - f) / (cfg.reps - t.failures)))
    t.to_csv(tmp_path / "a.csv")
    t2 = run_size_experiment(cfg)
    t2.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert t.to_json() == t2.to_json()
    doc = json.loads(t.to_json())
    assert np.array(doc["reject"]["naive"]).shape == (2, 1)
    assert len((tmp_path / "a.csv").read_text().splitlines()) == 3


def test_zero_replications_is_an_error():
    with pytest.raises(ConfigError):
        run_size_experiment(SimConfig(reps=0))
    with pytest.raises(ConfigError):
        SimConfig(r2_d=(1.0,))


def test_config_dict_roundtrip():
    cfg = SimConfig.from_dict({"n": 50, "r2_d": [0, 0.5], "penalty": {"c": 1.2}})
    assert cfg.r2_d == (0.0, 0.5) and cfg.penalty.c == 1.2
    assert SimConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        SimConfig.from_dict({"bogus": 1})
