"""Weighted-l1 Lasso and Post-Lasso with a linear link.

Objective for a response ``y`` and dictionary ``F`` (n x p):

    E_n[(y - F theta)**2 / 2] + (lam / n) * sum_j l_j |theta_j|

The penalty level follows ``lam = c sqrt(n) Phi^{-1}(1 - gamma / (2 p n**d_u))``
and the loadings ``l_j`` are re-estimated from Post-Lasso residuals
(:func:`fit_with_iterated_loadings`).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from ._backend import cd_sweeps
from .dictionary import independent_columns
from .errors import ConvergenceError, HDTEError


@dataclass(frozen=True)
class PenaltyConfig:
    """Tuning for the penalty level and the loading iterations.

    ``gamma=None`` means ``0.1 / log(n)`` evaluated at the fit's sample size.
    ``loading_floor`` is relative to each column's root mean square.
    """

    c: float = 1.1
    gamma: float | None = None
    d_u: int = 0
    K: int = 15
    loading_stop_tol: float = 1e-6
    loading_floor: float = 1e-6
    kkt_tol: float = 1e-7
    max_sweeps: int | None = None

    def __post_init__(self):
        if not self.c > 1:
            raise ValueError("slack constant c must exceed 1")
        if self.gamma is not None and not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.d_u < 0:
            raise ValueError("d_u must be >= 0")

    def gamma_for(self, n):
        return self.gamma if self.gamma is not None else 0.1 / math.log(n)

    def lam(self, n, p):
        return penalty_level(n, p, self.d_u, self.gamma_for(n), self.c)


@dataclass
class PenalizedFit:
    theta_lasso: np.ndarray
    support: np.ndarray
    theta_post: np.ndarray
    loadings: np.ndarray
    lam: float
    iterations_used: int
    objective_value: float
    kkt_residual: float = 0.0
    loadings_converged: bool = False
    refit_flag: bool = False
    refit_dropped: tuple = ()
    lasso_residual_loadings: bool = False
    link: str = "linear"
    separation_flag: bool = False
    unpenalized: tuple = ()

    def predict_index(self, F, post=True):
        """Linear index F @ theta (Post-Lasso coefficients by default)."""
        return np.asarray(F) @ (self.theta_post if post else self.theta_lasso)

    def predict(self, F, post=True):
        """Fitted conditional mean: the index, or its logistic transform."""
        t = self.predict_index(F, post)
        if self.link == "logistic":
            return expit(t)
        return t

    def diagnostics(self):
        """JSON-ready dump of lambda, loadings, support and certificates."""
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, np.ndarray):
                d[k] = v.tolist()
        d["support"] = [int(j) for j in self.support]
        d["refit_dropped"] = [int(j) for j in self.refit_dropped]
        d["unpenalized"] = [int(j) for j in self.unpenalized]
        return d

    def to_json(self):
        return json.dumps(self.diagnostics(), sort_keys=True)


def penalty_level(n, p, d_u=0, gamma=None, c=1.1):
    """``c sqrt(n) Phi^{-1}(1 - gamma / (2 p n**d_u))``."""
    if n < 1 or p < 1:
        raise ValueError("n and p must be >= 1")
    if gamma is None:
        gamma = 0.1 / math.log(n)
    tail = gamma / (2.0 * p * float(n) ** d_u)
    if not 0.0 < tail < 1.0:
        raise ValueError(
            f"normal-quantile argument 1 - {tail!r} is outside (0, 1); gamma too large"
        )
    return c * math.sqrt(n) * float(norm.isf(tail))


def column_rms(F):
    return np.sqrt(np.mean(np.asarray(F) ** 2, axis=0))


def floor_loadings(raw, F, floor, unpenalized=()):
    out = np.maximum(raw, floor * column_rms(F))
    if len(unpenalized):
        out[list(unpenalized)] = 0.0
    return out


def initial_loadings_linear(y, F, floor=1e-6, unpenalized=()):
    """``sqrt(E_n[f_j^2 (y - ybar)^2])``, floored."""
    y = np.asarray(y, dtype=float)
    F = np.asarray(F, dtype=float)
    e = y - y.mean()
    raw = np.sqrt(np.mean(F ** 2 * (e ** 2)[:, None], axis=0))
    return floor_loadings(raw, F, floor, unpenalized)


def kkt_residual(score, theta, thresh):
    """Largest violation of the weighted-l1 stationarity conditions.

    ``score`` is E_n[w f_j r] (minus the gradient of the smooth part).
    Active coordinates need score_j = thresh_j sign(theta_j); inactive ones
    need |score_j| <= thresh_j.
    """
    active = theta != 0
    v_act = np.abs(score[active] - thresh[active] * np.sign(theta[active]))
    v_in = np.abs(score[~active]) - thresh[~active]
    m = 0.0
    if v_act.size:
        m = max(m, float(v_act.max()))
    if v_in.size:
        m = max(m, float(v_in.max()))
    return m


def solve_weighted_l1(F, w, r, beta, thresh, colsq=None, kkt_tol=1e-7, max_sweeps=None,
                      kernel=None):
    """Coordinate descent for (1/2n) sum w r^2 + sum thresh |beta|.

    ``F`` must be Fortran-ordered float64; ``r`` (working residual) and
    ``beta`` are updated in place. Alternates a full sweep with sweeps over
    the active set until the KKT residual is below ``kkt_tol``.
    Returns ``(sweeps, kkt)``.
    """
    kernel = cd_sweeps if kernel is None else kernel
    n, p = F.shape
    if colsq is None:
        colsq = np.ascontiguousarray((F ** 2).T @ w / n)
    if max_sweeps is None:
        max_sweeps = max(10 * p, 1000)
    all_idx = np.arange(p, dtype=np.intp)
    inner_tol = 1e-3 * kkt_tol
    sweeps = 0
    kkt = np.inf
    while sweeps < max_sweeps:
        s, _ = kernel(F, w, r, beta, thresh, colsq, all_idx, 1, inner_tol)
        sweeps += s
        active = np.flatnonzero(beta).astype(np.intp)
        if active.size and sweeps < max_sweeps:
            s, _ = kernel(F, w, r, beta, thresh, colsq, active, max_sweeps - sweeps, inner_tol)
            sweeps += s
        score = F.T @ (w * r) / n
        kkt = kkt_residual(score, beta, thresh)
        if kkt <= kkt_tol:
            break
    return sweeps, kkt


def lasso_objective(F, y, theta, lam, loadings):
    F = np.asarray(F)
    n = F.shape[0]
    r = np.asarray(y) - F @ theta
    return 0.5 * float(np.mean(r ** 2)) + lam / n * float(np.sum(loadings * np.abs(theta)))


def _lasso(F, y, lam, loadings, theta0=None, kkt_tol=1e-7, max_sweeps=None, colsq=None,
           kernel=None):
    n, p = F.shape
    thresh = np.ascontiguousarray(lam / n * np.asarray(loadings, dtype=float))
    if np.any(thresh < 0) or not np.all(np.isfinite(thresh)):
        raise ValueError("loadings must be finite and non-negative")
    beta = np.zeros(p) if theta0 is None else np.array(theta0, dtype=float)
    r = np.ascontiguousarray(y - F @ beta, dtype=float)
    w = np.ones(n)
    if colsq is None:
        colsq = np.ascontiguousarray(np.mean(F ** 2, axis=0))
    sweeps, kkt = solve_weighted_l1(F, w, r, beta, thresh, colsq, kkt_tol, max_sweeps, kernel)
    if kkt > kkt_tol:
        raise ConvergenceError(f"Lasso did not converge in {sweeps} sweeps", kkt)
    return beta, kkt


def fit_lasso_linear(F, y, lam, loadings, theta0=None, kkt_tol=1e-7, max_sweeps=None):
    """Minimize the weighted-l1 least-squares objective; returns theta."""
    F = np.asfortranarray(F, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(F)) and np.all(np.isfinite(y))):
        raise ValueError("F and y must be finite")
    theta, _ = _lasso(F, y, lam, loadings, theta0, kkt_tol, max_sweeps)
    return theta


@dataclass
class Refit:
    theta: np.ndarray
    dropped: tuple = ()

    @property
    def flag(self):
        return bool(self.dropped)


def refit_post_lasso(F, y, support, tol=1e-9) -> Refit:
    """Least squares on the ``support`` columns, zeros elsewhere.

    Columns that are numerically dependent on earlier support columns are
    dropped (greedy residual rule) and reported in ``Refit.dropped``.
    """
    F = np.asarray(F, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = F.shape
    support = np.asarray(sorted(set(int(j) for j in support)), dtype=np.intp)
    theta = np.zeros(p)
    if support.size == 0:
        return Refit(theta)
    Fs = F[:, support]
    keep = independent_columns(Fs, tol)
    dropped = tuple(int(j) for j in support[~keep])
    cols = support[keep]
    if cols.size == 0:
        return Refit(theta, dropped)
    if cols.size > n:
        raise HDTEError(f"support of size {cols.size} exceeds n={n}")
    coef, *_ = np.linalg.lstsq(F[:, cols], y, rcond=None)
    theta[cols] = coef
    return Refit(theta, dropped)


def fit_with_iterated_loadings(F, y, cfg: PenaltyConfig = PenaltyConfig(), lam=None, p_eff=None,
                               unpenalized=()) -> PenalizedFit:
    """Lasso -> Post-Lasso -> loading update, at most ``cfg.K`` rounds.

    Stops early once the l2 change in loadings is below
    ``cfg.loading_stop_tol``. ``p_eff`` overrides the dimension entering the
    penalty level (e.g. 2p for a z-interacted problem fit per arm).
    Columns in ``unpenalized`` get zero loading and are always refit.
    """
    F = np.asfortranarray(F, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = F.shape
    if lam is None:
        lam = cfg.lam(n, p_eff or p)
    unpen = tuple(int(j) for j in unpenalized)
    colsq = np.ascontiguousarray(np.mean(F ** 2, axis=0))
    loadings = initial_loadings_linear(y, F, cfg.loading_floor, unpen)
    theta = np.zeros(p)
    converged = False
    it = 0
    for it in range(1, cfg.K + 1):
        theta, kkt = _lasso(F, y, lam, loadings, theta, cfg.kkt_tol, cfg.max_sweeps, colsq)
        support = np.union1d(np.flatnonzero(theta), unpen).astype(np.intp)
        try:
            refit = refit_post_lasso(F, y, support)
            post_ok = not refit.flag
        except HDTEError:
            refit = Refit(theta.copy(), ())
            post_ok = False
        resid = y - F @ (refit.theta if post_ok else theta)
        new = floor_loadings(
            np.sqrt(np.mean(F ** 2 * (resid ** 2)[:, None], axis=0)), F, cfg.loading_floor, unpen
        )
        if np.linalg.norm(new - loadings) < cfg.loading_stop_tol:
            converged = True
            break
        if it < cfg.K:
            loadings = new
    return PenalizedFit(
        theta_lasso=theta,
        support=np.flatnonzero(theta),
        theta_post=refit.theta,
        loadings=loadings,
        lam=float(lam),
        iterations_used=it,
        objective_value=lasso_objective(F, y, theta, lam, loadings),
        kkt_residual=kkt,
        loadings_converged=converged,
        refit_flag=refit.flag,
        refit_dropped=refit.dropped,
        lasso_residual_loadings=not post_ok,
        unpenalized=unpen,
    )
