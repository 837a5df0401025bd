"""Fitting the regression functions g_V(z, x) and the instrument propensity.

Each ``g_V(z, .)`` is fitted on the rows with ``Z = z`` (penalty dimension
``2p``, matching a fully z-interacted dictionary) by Post-Lasso for
continuous targets or post-l1-logistic for binary ones, and then predicted
on every row. ``g_{1_0(D)}`` is ``1 - g_{1_1(D)}``; in the thresholded
family ``g_{Y_u}`` is ``g_{1_0(D)Y_u} + g_{1_1(D)Y_u}``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError
from .lasso import PenaltyConfig, fit_with_iterated_loadings
from .logistic import fit_with_iterated_loadings_logistic
from .reduced_form import NuisanceSet, target_values, trim_propensity


@dataclass
class TargetFit:
    """How one nuisance function was obtained."""

    method: str
    n: int
    fit: object = None
    value: float | None = None

    def summary(self, labels=None):
        out = {"method": self.method, "n": self.n}
        if self.value is not None:
            out["value"] = self.value
        if self.fit is not None:
            f = self.fit
            supp = [int(j) for j in f.support]
            out.update(
                lam=f.lam,
                support=[labels[j] for j in supp] if labels is not None else supp,
                iterations=f.iterations_used,
                loadings_converged=f.loadings_converged,
                refit_flag=f.refit_flag,
                separation_flag=f.separation_flag,
            )
        return out


def is_binary(v):
    return bool(np.all((v == 0) | (v == 1)))


def fit_target(F_fit, v, F_pred, cfg, p_eff, unpenalized=(0,)):
    """Fit E[v | x] on ``F_fit`` rows and predict on ``F_pred``.

    A constant ``v`` is returned as that constant without fitting (a binary
    constant response has no finite logistic fit).
    """
    v = np.asarray(v, dtype=float)
    n = v.size
    if n == 0:
        raise DataError("no observations in this instrument arm")
    if np.all(v == v[0]):
        return np.full(F_pred.shape[0], float(v[0])), TargetFit("constant", n, value=float(v[0]))
    if is_binary(v):
        fit = fit_with_iterated_loadings_logistic(F_fit, v, cfg, p_eff=p_eff, unpenalized=unpenalized)
        return fit.predict(F_pred), TargetFit("logistic", n, fit)
    fit = fit_with_iterated_loadings(F_fit, v, cfg, p_eff=p_eff, unpenalized=unpenalized)
    return fit.predict(F_pred), TargetFit("linear", n, fit)


def fit_propensity(F, z, cfg=PenaltyConfig(), trim_eps=1e-12, unpenalized=(0,)):
    """l1-logistic fit of P(Z=1 | x), trimmed; returns ``(mhat, n_trimmed, TargetFit)``."""
    z = np.asarray(z, dtype=float)
    if np.all(z == z[0]):
        raise DataError("instrument has no variation; propensity is not identified")
    fit = fit_with_iterated_loadings_logistic(F, z, cfg, unpenalized=unpenalized)
    mhat, n_trim = trim_propensity(fit.predict(F), trim_eps)
    return mhat, n_trim, TargetFit("logistic", z.size, fit)


def _arm_fits(F, v, z, cfg, p_eff, unpenalized, skip=()):
    preds, info = {}, {}
    for arm in (0, 1):
        if arm in skip:
            continue
        rows = z == arm
        preds[arm], info[arm] = fit_target(F[rows], v[rows], F, cfg, p_eff, unpenalized)
    return preds, info


def _map(fn, items, threads):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def fit_nuisances(F, y, d, z, u_grid=None, cfg=PenaltyConfig(), known_zero=(), trim_eps=1e-12,
                  unpenalized=(0,), d_u=None, threads=1, propensity=None):
    """Fit every nuisance needed for the five-target family.

    Parameters
    ----------
    F : (n, p) array
        Dictionary, usually with an intercept in column 0.
    y, d, z : arrays
        Outcome, treatment and instrument.
    u_grid : array or None
        Outcome thresholds; None fits the untransformed-outcome family.
    known_zero : iterable of (tag, z)
        Cells declared identically zero (not fitted).
    d_u : int or None
        Exponent of n in the penalty level; defaults to 0 for the
        untransformed family and 1 for the thresholded one.
    propensity : tuple or None
        Precomputed ``(mhat, n_trimmed, TargetFit)`` to reuse.

    Returns
    -------
    nuisances : list of NuisanceSet
        One per threshold (a single entry when ``u_grid`` is None).
    diagnostics : dict
    """
    F = np.asarray(F, dtype=float)
    y = np.asarray(y, dtype=float)
    d = np.asarray(d, dtype=float)
    z = np.asarray(z)
    n, p = F.shape
    if d_u is None:
        d_u = 0 if u_grid is None else 1
    cfg = replace(cfg, d_u=d_u)
    known = frozenset(known_zero)
    if propensity is None:
        propensity = fit_propensity(F, z, cfg, trim_eps, unpenalized)
    mhat, n_trim, prop_info = propensity
    p_eff = 2 * p

    treat_skip = tuple(a for a in (0, 1) if ("1_1(D)", a) in known)
    g_d, d_info = _arm_fits(F, d, z, cfg, p_eff, unpenalized, treat_skip)
    shared = {}
    for a in (0, 1):
        g1 = g_d.get(a, np.zeros(n))
        shared[("1_1(D)", a)] = g1
        shared[("1_0(D)", a)] = 1.0 - g1
    diag = {
        "propensity": prop_info,
        "n_trimmed": n_trim,
        "1_1(D)": d_info,
    }

    def one(y_u):
        ghat = dict(shared)
        info = {}
        for tag in ("1_1(D)Y", "1_0(D)Y"):
            skip = tuple(a for a in (0, 1) if (tag, a) in known)
            preds, inf = _arm_fits(F, target_values(y_u, d, tag), z, cfg, p_eff, unpenalized, skip)
            for a in (0, 1):
                ghat[(tag, a)] = preds.get(a, np.zeros(n))
            info[tag] = inf
        if u_grid is None:
            skip = tuple(a for a in (0, 1) if ("Y", a) in known)
            preds, inf = _arm_fits(F, y_u, z, cfg, p_eff, unpenalized, skip)
            for a in (0, 1):
                ghat[("Y", a)] = preds.get(a, np.zeros(n))
            info["Y"] = inf
        else:
            for a in (0, 1):
                ghat[("Y", a)] = ghat[("1_1(D)Y", a)] + ghat[("1_0(D)Y", a)]
        return NuisanceSet(ghat, mhat, trim_eps, n_trim, known), info

    if u_grid is None:
        results = [one(y)]
    else:
        grid = np.asarray(u_grid, dtype=float)
        results = _map(lambda u: one((y <= u).astype(float)), grid, threads)
    nuisances = [r[0] for r in results]
    diag["targets"] = [r[1] for r in results]
    return nuisances, diag


def summarize_diagnostics(diag, labels=None):
    """JSON-ready view of :func:`fit_nuisances` diagnostics."""

    def arms(info):
        return {str(a): tf.summary(labels) for a, tf in sorted(info.items())}

    return {
        "propensity": diag["propensity"].summary(labels),
        "n_trimmed": diag["n_trimmed"],
        "1_1(D)": arms(diag["1_1(D)"]),
        "targets": [{tag: arms(inf) for tag, inf in t.items()} for t in diag["targets"]],
    }
