"""Multiplier bootstrap over influence values, standard errors and bands.

A draw perturbs the reduced form with iid multipliers xi:

    mean0:  rho* = rho + n^-1 sum_i xi_i psi_i
    mean1:  rho* = n^-1 sum_i (1 + xi_i) (psi_i + rho)

and maps rho* through the effect functional. Draw ``b`` uses the generator
``np.random.default_rng([seed, b])``, so draws do not depend on evaluation
order.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import HDTEError

MULTIPLIERS = ("bayesian", "gaussian", "wild")
PARAMETERIZATIONS = ("mean0", "mean1")
IQR_NORMAL = 2.0 * float(norm.ppf(0.75))
FLAG_WARN_FRACTION = 0.05


def draw_weights(kind, n, seed, parameterization="mean0"):
    """n iid multipliers; ``mean1`` returns ``1 + xi``.

    ``bayesian``: Exp(1) - 1; ``gaussian``: N(0, 1);
    ``wild``: N1 / sqrt(2) + (N2**2 - 1) / 2 (unit variance, third moment 1).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if parameterization not in PARAMETERIZATIONS:
        raise ValueError(f"parameterization must be one of {PARAMETERIZATIONS}")
    rng = np.random.default_rng(seed)
    if kind == "bayesian":
        xi = rng.standard_exponential(n) - 1.0
    elif kind == "gaussian":
        xi = rng.standard_normal(n)
    elif kind == "wild":
        r1 = rng.standard_normal(n)
        r2 = rng.standard_normal(n)
        xi = r1 / math.sqrt(2.0) + (r2 * r2 - 1.0) / 2.0
    else:
        raise ValueError(f"unknown multiplier kind {kind!r}; choose from {MULTIPLIERS}")
    return xi + 1.0 if parameterization == "mean1" else xi


def weight_matrix(kind, n, B, seed):
    """(B, n) matrix of mean-zero multipliers, row b from seed ``[seed, b]``."""
    return np.stack([draw_weights(kind, n, [int(seed), b]) for b in range(B)])


@dataclass
class BootstrapResult:
    B: int
    draws: np.ndarray
    seed: int
    kind: str
    parameterization: str = "mean0"
    flagged: np.ndarray | None = None

    def __post_init__(self):
        if self.flagged is None:
            self.flagged = np.zeros(self.B, dtype=bool)

    @property
    def per_draw_seeds(self):
        return [[int(self.seed), b] for b in range(self.B)]

    @property
    def flagged_fraction(self):
        return float(np.mean(self.flagged)) if self.B else 0.0

    @property
    def status(self):
        return "warning" if self.flagged_fraction > FLAG_WARN_FRACTION else "ok"

    @property
    def valid_draws(self):
        return self.draws[~self.flagged]


def _perturb(rho, psi, xi, parameterization):
    n = psi.shape[0]
    flat = psi.reshape(n, -1)
    rho_flat = np.asarray(rho, dtype=float).reshape(-1)
    if parameterization == "mean0":
        out = rho_flat + xi @ flat / n
    else:
        out = rho_flat + xi @ (flat + rho_flat) / n
    return out.reshape((xi.shape[0],) + np.shape(rho))


def bootstrap_reduced_form(rho, psi, B, kind="gaussian", seed=0, parameterization="mean0",
                           chunk=256):
    """Draws of the reduced-form vector.

    Parameters
    ----------
    rho : array, shape S
        Point estimate.
    psi : array, shape (n,) + S
        Mean-zero influence values.
    """
    psi = np.asarray(psi, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if psi.shape[1:] != rho.shape:
        raise ValueError("psi must have shape (n,) + rho.shape")
    if parameterization not in PARAMETERIZATIONS:
        raise ValueError(f"parameterization must be one of {PARAMETERIZATIONS}")
    n = psi.shape[0]
    draws = np.empty((B,) + rho.shape)
    for start in range(0, B, chunk):
        stop = min(B, start + chunk)
        xi = np.stack([draw_weights(kind, n, [int(seed), b]) for b in range(start, stop)])
        draws[start:stop] = _perturb(rho, psi, xi, parameterization)
    return BootstrapResult(B, draws, int(seed), kind, parameterization)


def bootstrap_effects(reduced, functional, B, kind="wild", seed=0, parameterization="mean1",
                      rho_draws=None):
    """Push reduced-form draws through ``functional``.

    ``functional`` maps an array of shape (..., U, 15) to (..., Q) and
    signals an undefined value with NaN or an :class:`HDTEError`; such
    draws are flagged and left out of downstream quantiles.
    ``rho_draws`` reuses an existing :class:`BootstrapResult` of the
    reduced form (so several estimands share multipliers).
    """
    if rho_draws is None:
        rho_draws = bootstrap_reduced_form(reduced.rho, reduced.psi, B, kind, seed, parameterization)
    R = rho_draws.draws
    try:
        vals = np.asarray(functional(R), dtype=float)
        if vals.shape[0] != R.shape[0]:
            raise ValueError("functional did not preserve the draw axis")
    except (HDTEError, ValueError, ArithmeticError):
        rows = []
        for b in range(R.shape[0]):
            try:
                rows.append(np.atleast_1d(np.asarray(functional(R[b]), dtype=float)))
            except (HDTEError, ValueError, ArithmeticError):
                rows.append(None)
        width = max((r.size for r in rows if r is not None), default=1)
        vals = np.vstack([r if r is not None else np.full(width, np.nan) for r in rows])
    vals = vals.reshape(R.shape[0], -1)
    flagged = ~np.all(np.isfinite(vals), axis=1)
    res = BootstrapResult(rho_draws.B, vals, rho_draws.seed, rho_draws.kind,
                          rho_draws.parameterization, flagged)
    if res.status == "warning":
        warnings.warn(f"{100 * res.flagged_fraction:.1f}% of bootstrap draws were undefined",
                      RuntimeWarning, stacklevel=2)
    return res


def se_analytic(contrast, denom=1.0, estimate=None):
    """``sqrt( sum_i (c_i / denom - est)^2 / (n - 1) / n )``.

    ``estimate`` defaults to ``mean(c) / denom``.
    """
    c = np.asarray(contrast, dtype=float) / denom
    n = c.size
    if n < 2:
        raise ValueError("need n >= 2")
    est = c.mean() if estimate is None else estimate
    return math.sqrt(float(np.sum((c - est) ** 2)) / (n - 1) / n)


def se_iqr(draws, axis=0):
    """Interquartile range of the draws over that of N(0, 1) (NaNs ignored)."""
    draws = np.asarray(draws, dtype=float)
    if draws.shape[axis] < 4:
        raise ValueError("need at least 4 draws")
    q75, q25 = np.nanquantile(draws, [0.75, 0.25], axis=axis)
    return (q75 - q25) / IQR_NORMAL


@dataclass
class Bands:
    estimate: np.ndarray
    se: np.ndarray
    level: float
    cv_uniform: float
    cv_pointwise: np.ndarray
    z_normal: float
    lower: np.ndarray
    upper: np.ndarray
    pointwise_lower: np.ndarray
    pointwise_upper: np.ndarray
    boot_pointwise_lower: np.ndarray
    boot_pointwise_upper: np.ndarray
    excluded: np.ndarray
    warning: str | None = None


def uniform_band(estimates, draws, level=0.95, se=None):
    """Sup-t band from bootstrap draws.

    Parameters
    ----------
    estimates : (Q,) array
    draws : (B, Q) array
        Rows with any non-finite value are dropped.
    se : (Q,) array, optional
        Scale s(q); defaults to :func:`se_iqr` of the draws.

    Points with ``s(q) = 0`` are left out of the maximum and get zero-width
    bands; if every ``s(q)`` is zero the critical value is 0 and a warning
    is attached.
    """
    est = np.atleast_1d(np.asarray(estimates, dtype=float))
    D = np.asarray(draws, dtype=float).reshape(-1, est.size)
    D = D[np.all(np.isfinite(D), axis=1)]
    if D.shape[0] < 4:
        raise ValueError("fewer than 4 usable bootstrap draws")
    s = se_iqr(D) if se is None else np.atleast_1d(np.asarray(se, dtype=float))
    excluded = ~(s > 0)
    warn = None
    cv_point = np.zeros(est.size)
    if np.all(excluded):
        cv = 0.0
        warn = "all bootstrap scales are zero; bands collapse to the estimate"
    else:
        t = np.abs(D[:, ~excluded] - est[~excluded]) / s[~excluded]
        cv = float(np.quantile(t.max(axis=1), level))
        cv_point[~excluded] = np.quantile(t, level, axis=0)
    s0 = np.where(excluded, 0.0, s)
    z = float(norm.ppf(1.0 - (1.0 - level) / 2.0))
    return Bands(
        estimate=est,
        se=s,
        level=level,
        cv_uniform=cv,
        cv_pointwise=cv_point,
        z_normal=z,
        lower=est - cv * s0,
        upper=est + cv * s0,
        pointwise_lower=est - z * s0,
        pointwise_upper=est + z * s0,
        boot_pointwise_lower=est - cv_point * s0,
        boot_pointwise_upper=est + cv_point * s0,
        excluded=excluded,
        warning=warn,
    )
