"""Monte Carlo size study: naive post-selection vs orthogonal-moment ATE.

Design: x ~ N(0, Sigma) with Sigma_jk = rho**|j-k|, theta0_j = 1/j**2,

    d = 1{ L(x' c_d theta0) > v },   v ~ U(0, 1)
    y = d * x' (c_y theta0) + zeta,  zeta ~ N(0, 1)

where L is the logistic CDF and the scalars c_d, c_y set the population
R^2 of the index in the treatment and outcome equations. The true average
treatment effect is E[x' c_y theta0] = 0 in every cell.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .bootstrap import se_analytic
from .dictionary import DesignMatrix, build_z_design
from .errors import ConfigError, HDTEError
from .lasso import PenaltyConfig, fit_with_iterated_loadings
from .nuisance import fit_propensity
from .reduced_form import estimate_alpha

DEFAULT_R2 = tuple(round(0.1 * k, 1) for k in range(10))


@dataclass(frozen=True)
class SimConfig:
    n: int = 200
    p: int = 250
    r2_d: tuple = DEFAULT_R2
    r2_y: tuple = DEFAULT_R2
    reps: int = 100
    level: float = 0.05
    seed: int = 0
    rho: float = 0.5
    trim_eps: float = 1e-12
    penalty: PenaltyConfig = PenaltyConfig()
    threads: int = 1

    def __post_init__(self):
        for r in tuple(self.r2_d) + tuple(self.r2_y):
            if not 0 <= r < 1:
                raise ConfigError(f"R^2 values must lie in [0, 1); got {r!r}")
        if self.reps < 0 or self.n < 4 or self.p < 1:
            raise ConfigError("need reps >= 0, n >= 4, p >= 1")
        if not 0 < self.level < 1:
            raise ConfigError("level must lie in (0, 1)")

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        if "penalty" in doc:
            doc["penalty"] = PenaltyConfig(**doc["penalty"])
        for k in ("r2_d", "r2_y"):
            if k in doc:
                doc[k] = tuple(float(v) for v in doc[k])
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(f"bad simulation config: {exc}") from None

    def to_dict(self):
        d = asdict(self)
        d["r2_d"] = list(self.r2_d)
        d["r2_y"] = list(self.r2_y)
        return d


def toeplitz_cov(p, rho=0.5):
    j = np.arange(p)
    return rho ** np.abs(j[:, None] - j[None, :])


def theta0(p):
    return 1.0 / np.arange(1, p + 1) ** 2


@lru_cache(maxsize=8)
def _factor(p, rho):
    return np.linalg.cholesky(toeplitz_cov(p, rho))


def coef_scales(r2_d, r2_y, theta, sigma):
    """``(c_d, c_y)`` giving index R^2 of ``r2_d`` (logistic latent) and ``r2_y``."""
    for r in (r2_d, r2_y):
        if not 0 <= r < 1:
            raise ValueError(f"R^2 must lie in [0, 1); got {r!r}")
    q = float(theta @ sigma @ theta)
    c_d = math.sqrt((math.pi ** 2 / 3.0) * r2_d / ((1.0 - r2_d) * q))
    c_y = math.sqrt(r2_y / ((1.0 - r2_y) * q))
    return c_d, c_y


def gen_dgp(cfg: SimConfig, cell, rep_seed):
    """One dataset ``(y, d, x)`` for ``cell = (r2_d, r2_y)``."""
    r2_d, r2_y = cell
    th = theta0(cfg.p)
    c_d, c_y = coef_scales(r2_d, r2_y, th, toeplitz_cov(cfg.p, cfg.rho))
    rng = np.random.default_rng(rep_seed)
    x = rng.standard_normal((cfg.n, cfg.p)) @ _factor(cfg.p, cfg.rho).T
    v = rng.random(cfg.n)
    zeta = rng.standard_normal(cfg.n)
    index = x @ th
    d = (expit(c_d * index) > v).astype(float)
    y = d * (c_y * index) + zeta
    return y, d, x


def true_ate(cell, cfg: SimConfig):
    """Population ATE of the design: E[x] = 0 makes it exactly 0."""
    return 0.0


def with_const(x):
    return np.column_stack([np.ones(x.shape[0]), x])


@dataclass
class OutcomeFit:
    """Post-Lasso fit of E[Y | D, X] on ((1-D) f, D f)."""

    g0: np.ndarray
    g1: np.ndarray
    theta: np.ndarray
    Fz: np.ndarray
    F1: np.ndarray
    F0: np.ndarray
    fit: object


def fit_outcome_regression(F, y, d, cfg=PenaltyConfig()):
    """``F`` has the intercept in column 0; both arm intercepts are unpenalized."""
    F = np.asarray(F, dtype=float)
    p = F.shape[1]
    m = DesignMatrix(F, tuple(f"f{j}" for j in range(p)))
    Fz = build_z_design(m, d).values
    fit = fit_with_iterated_loadings(Fz, y, cfg, unpenalized=(0, p))
    zero = np.zeros_like(F)
    F1 = np.hstack([zero, F])
    F0 = np.hstack([F, zero])
    return OutcomeFit(F0 @ fit.theta_post, F1 @ fit.theta_post, fit.theta_post, Fz, F1, F0, fit)


def naive_ate(F, y, d, cfg=PenaltyConfig(), outcome=None):
    """Plug-in ``mean(g1 - g0)`` with a variance that treats the selected
    model as fixed: HC0 sandwich for the refit coefficients plus the
    sampling variance of the covariate average.

    Returns ``(estimate, se, flag)``; ``flag`` is True when only the two
    arm intercepts were kept.
    """
    o = outcome if outcome is not None else fit_outcome_regression(F, y, d, cfg)
    tau_i = o.g1 - o.g0
    est = float(np.mean(tau_i))
    n = y.size
    S = np.flatnonzero(o.theta)
    p = F.shape[1]
    flag = set(S.tolist()) <= {0, p}
    if S.size == 0:
        return 0.0, 0.0, True
    X = o.Fz[:, S]
    e = y - X @ o.theta[S]
    a = (o.F1 - o.F0)[:, S].mean(axis=0)
    bread = np.linalg.pinv(X.T @ X)
    meat = (X * (e ** 2)[:, None]).T @ X
    V = bread @ meat @ bread
    var = float(a @ V @ a) + float(np.var(tau_i)) / n
    return est, math.sqrt(max(var, 0.0)), flag


def orthogonal_ate(F, y, d, cfg=PenaltyConfig(), outcome=None, propensity=None, trim_eps=1e-12):
    """Orthogonal-moment ATE ``alpha_Y(1) - alpha_Y(0)`` with analytic SE.

    Returns ``(estimate, se, n_trimmed)``.
    """
    o = outcome if outcome is not None else fit_outcome_regression(F, y, d, cfg)
    if propensity is None:
        propensity = fit_propensity(F, d, cfg, trim_eps)
    mhat, n_trim, _ = propensity
    a1, p1 = estimate_alpha(y, 1, d, o.g1, mhat)
    a0, p0 = estimate_alpha(y, 0, d, o.g0, mhat)
    est = a1 - a0
    return est, se_analytic((p1 + a1) - (p0 + a0), 1.0, est), n_trim


def replicate(cfg: SimConfig, cell_idx, rep):
    """One replication: ``(naive_est, naive_se, orth_est, orth_se)`` or None on failure."""
    i, j = cell_idx
    cell = (cfg.r2_d[i], cfg.r2_y[j])
    y, d, x = gen_dgp(cfg, cell, [int(cfg.seed), i, j, rep])
    if np.all(d == d[0]):
        return None
    F = with_const(x)
    try:
        o = fit_outcome_regression(F, y, d, cfg.penalty)
        ne, ns, _ = naive_ate(F, y, d, cfg.penalty, o)
        oe, os_, _ = orthogonal_ate(F, y, d, cfg.penalty, o, trim_eps=cfg.trim_eps)
    except HDTEError:
        return None
    return ne, ns, oe, os_


@dataclass
class SizeTable:
    r2_d: tuple
    r2_y: tuple
    reps: int
    level: float
    reject: dict
    mc_se: dict
    mean_estimate: dict
    failures: np.ndarray
    estimates: dict = field(default_factory=dict, repr=False)

    ESTIMATORS = ("orthogonal", "naive")

    def rows(self):
        out = []
        for i, rd in enumerate(self.r2_d):
            for j, ry in enumerate(self.r2_y):
                row = [rd, ry]
                for e in self.ESTIMATORS:
                    row += [self.reject[e][i, j], self.mc_se[e][i, j], self.mean_estimate[e][i, j]]
                row.append(int(self.failures[i, j]))
                out.append(row)
        return out

    @property
    def header(self):
        h = ["r2_d", "r2_y"]
        for e in self.ESTIMATORS:
            h += [f"reject_{e}", f"mcse_{e}", f"mean_{e}"]
        return h + ["failures"]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header)
            for row in self.rows():
                w.writerow([fmt(v) for v in row])

    def to_json(self):
        """Heatmap-ready: one matrix per estimator, rows r2_d, columns r2_y."""
        doc = {
            "r2_d": list(self.r2_d),
            "r2_y": list(self.r2_y),
            "reps": self.reps,
            "level": self.level,
            "reject": {e: self.reject[e].tolist() for e in self.ESTIMATORS},
            "mc_se": {e: self.mc_se[e].tolist() for e in self.ESTIMATORS},
            "mean_estimate": {e: self.mean_estimate[e].tolist() for e in self.ESTIMATORS},
            "failures": self.failures.tolist(),
        }
        return json.dumps(doc, sort_keys=True, indent=1)


def fmt(v):
    """17 significant digits for floats, plain text otherwise."""
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def run_size_experiment(cfg: SimConfig) -> SizeTable:
    """Rejection frequencies of the two-sided t-test of ATE = truth per cell."""
    if cfg.reps == 0 or not cfg.r2_d or not cfg.r2_y:
        raise ConfigError("size experiment needs at least one replication and one cell")
    crit = float(norm.ppf(1.0 - cfg.level / 2.0))
    shape = (len(cfg.r2_d), len(cfg.r2_y))
    tasks = [((i, j), r) for i in range(shape[0]) for j in range(shape[1]) for r in range(cfg.reps)]

    def run(task):
        return replicate(cfg, *task)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]

    est = {e: np.full(shape + (cfg.reps,), np.nan) for e in SizeTable.ESTIMATORS}
    se = {e: np.full(shape + (cfg.reps,), np.nan) for e in SizeTable.ESTIMATORS}
    for ((i, j), r), res in zip(tasks, results):
        if res is None:
            continue
        est["naive"][i, j, r], se["naive"][i, j, r] = res[0], res[1]
        est["orthogonal"][i, j, r], se["orthogonal"][i, j, r] = res[2], res[3]
    failures = np.sum(np.isnan(est["naive"]), axis=2)
    reject, mcse, mean = {}, {}, {}
    truth = np.array([[true_ate((a, b), cfg) for b in cfg.r2_y] for a in cfg.r2_d])
    for e in SizeTable.ESTIMATORS:
        ok = np.isfinite(est[e]) & np.isfinite(se[e])
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.abs(est[e] - truth[..., None]) / se[e]
        rej = np.where(ok, t > crit, False)
        cnt = ok.sum(axis=2)
        with np.errstate(invalid="ignore"):
            f = rej.sum(axis=2) / cnt
            reject[e] = f
            mcse[e] = np.sqrt(f * (1.0 - f) / cnt)
            mean[e] = np.nansum(np.where(ok, est[e], 0.0), axis=2) / cnt
    return SizeTable(tuple(cfg.r2_d), tuple(cfg.r2_y), cfg.reps, cfg.level, reject, mcse, mean,
                     failures, est)
