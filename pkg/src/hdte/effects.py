"""Structural effects as smooth or inverted functionals of the reduced form.

Every functional accepts reduced-form arrays whose last axis is the
15-component per-threshold vector (see :mod:`hdte.reduced_form`) and any
number of leading axes, so the same code maps point estimates and whole
bootstrap draw matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import WeakInstrumentError
from .reduced_form import component_index

DENOM_TOL = 1e-8

OK, EXTRAPOLATED, UNREACHED = 0, 1, 2


def _c(rho, tag, kind):
    return rho[..., component_index(tag, kind)]


def _ratio(num, den, tol, strict, what):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    weak = ~(np.abs(den) > tol)
    if strict and np.any(weak):
        bad = float(np.ravel(den)[np.flatnonzero(np.ravel(weak))[0]])
        raise WeakInstrumentError(bad, tol, what)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / den
    out = np.where(weak, np.nan, out)
    return out[()] if out.ndim == 0 else out


def lasf(rho_u, d, denom_tol=DENOM_TOL, strict=True):
    """Local average structural function of the (thresholded) outcome.

    ``(alpha_{1_d Y}(1) - alpha_{1_d Y}(0)) / (alpha_{1_d}(1) - alpha_{1_d}(0))``.
    With ``strict=False`` weak denominators give NaN instead of raising.
    """
    tv, tp = f"1_{d}(D)Y", f"1_{d}(D)"
    num = _c(rho_u, tv, "alpha1") - _c(rho_u, tv, "alpha0")
    den = _c(rho_u, tp, "alpha1") - _c(rho_u, tp, "alpha0")
    return _ratio(num, den, denom_tol, strict, f"first stage for d={d}")


def lasf_t(rho_u, d, denom_tol=DENOM_TOL, strict=True):
    """Structural function on the treated:
    ``(gamma_{1_d Y} - alpha_{1_d Y}(0)) / (gamma_{1_d} - alpha_{1_d}(0))``."""
    tv, tp = f"1_{d}(D)Y", f"1_{d}(D)"
    num = _c(rho_u, tv, "gamma") - _c(rho_u, tv, "alpha0")
    den = _c(rho_u, tp, "gamma") - _c(rho_u, tp, "alpha0")
    return _ratio(num, den, denom_tol, strict, f"treated first stage for d={d}")


def late(rho, denom_tol=DENOM_TOL, strict=True, check_forms=False):
    """``(alpha_Y(1) - alpha_Y(0)) / (alpha_{1_1}(1) - alpha_{1_1}(0))``.

    With ``check_forms`` the result is asserted equal (1e-12, relative to
    scale) to ``lasf(rho, 1) - lasf(rho, 0)``, which requires the reduced
    form to satisfy ``alpha_Y = alpha_{1_1 Y} + alpha_{1_0 Y}``.
    """
    num = _c(rho, "Y", "alpha1") - _c(rho, "Y", "alpha0")
    den = _c(rho, "1_1(D)", "alpha1") - _c(rho, "1_1(D)", "alpha0")
    out = _ratio(num, den, denom_tol, strict, "first stage")
    if check_forms:
        other = lasf(rho, 1, denom_tol, strict) - lasf(rho, 0, denom_tol, strict)
        scale = 1.0 + np.nanmax(np.abs([out, other]))
        ok = np.isnan(out) | np.isnan(other) | (np.abs(out - other) <= 1e-12 * scale)
        assert np.all(ok), "ratio and LASF-difference forms disagree"
    return out


def late_t(rho, denom_tol=DENOM_TOL, strict=True):
    """Treated-complier effect: ``lasf_t(rho, 1) - lasf_t(rho, 0)``."""
    return lasf_t(rho, 1, denom_tol, strict) - lasf_t(rho, 0, denom_tol, strict)


@dataclass
class EffectCurve:
    """Values of an estimand over an increasing index grid.

    ``flags`` holds one code per grid point (0 ok, 1 left-endpoint
    extrapolation, 2 level never reached).
    """

    index: np.ndarray
    values: np.ndarray
    estimand: str
    d: int | None = None
    flags: np.ndarray = field(default=None)

    def __post_init__(self):
        self.index = np.asarray(self.index, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.index.shape != self.values.shape or self.index.ndim != 1:
            raise ValueError("index and values must be 1-d of equal length")
        if self.index.size > 1 and not np.all(np.diff(self.index) > 0):
            raise ValueError("curve grid must be strictly increasing")
        if self.flags is None:
            self.flags = np.zeros(self.index.size, dtype=np.int8)


def default_taus():
    """0.10, 0.11, ..., 0.90."""
    return np.arange(10, 91) / 100.0


def default_u_grid(y, lo=5, hi=95):
    """Outcome percentiles lo..hi in 1-point steps (linear interpolation)."""
    return np.percentile(np.asarray(y, dtype=float), np.arange(lo, hi + 1))


def distribution_curve(reduced, d, estimand="local", denom_tol=DENOM_TOL):
    """LASF (``local``) or LASF-T (``local-treated``) over the threshold grid."""
    if reduced.u_grid is None:
        raise ValueError("reduced form has no threshold grid")
    if estimand == "local":
        vals = lasf(reduced.rho, d, denom_tol)
        tag = f"LASF({d})"
    elif estimand == "local-treated":
        vals = lasf_t(reduced.rho, d, denom_tol)
        tag = f"LASF-T({d})"
    else:
        raise ValueError("estimand must be 'local' or 'local-treated'")
    u = reduced.u_grid
    if u.size > 1 and not np.all(np.diff(u) > 0):
        # tied percentiles of a discrete outcome: keep the first of each tie
        keep = np.concatenate([[True], np.diff(u) > 0])
        u, vals = u[keep], vals[keep]
    return EffectCurve(u, vals, tag, d)


def invert_values(u, values, taus):
    """Left inverse of the piecewise-linear interpolant through ``(u, values)``.

    ``values`` may carry leading axes (e.g. bootstrap draws). Returns
    ``(q, flags)`` of shape ``values.shape[:-1] + (len(taus),)``. For each
    level the result is the first point where the interpolant reaches it.
    """
    u = np.asarray(u, dtype=float)
    vals = np.asarray(values, dtype=float)
    taus = np.asarray(taus, dtype=float)
    if u.size < 2:
        raise ValueError("need at least two grid points to invert")
    lead = vals.shape[:-1]
    V = vals.reshape(-1, u.size)
    q = np.empty((V.shape[0], taus.size))
    flags = np.zeros(q.shape, dtype=np.int8)
    rows = np.arange(V.shape[0])
    for t, tau in enumerate(taus):
        hit = V >= tau
        reached = hit.any(axis=1)
        k = np.argmax(hit, axis=1)
        left = k == 0
        km1 = np.maximum(k - 1, 0)
        v0, v1 = V[rows, km1], V[rows, k]
        u0, u1 = u[km1], u[k]
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = (tau - v0) / (v1 - v0)
            val = np.minimum(u0 + frac * (u1 - u0), u1)
        val = np.where(left, u[0], val)
        val = np.where(reached, val, np.nan)
        q[:, t] = val
        flags[:, t] = np.where(~reached, UNREACHED, np.where(left & (V[:, 0] > tau), EXTRAPOLATED, OK))
    return q.reshape(lead + (taus.size,)), flags.reshape(lead + (taus.size,))


def quantile_invert(curve, taus=None):
    """``inf{u : curve(u) >= tau}`` on the linear interpolant, per tau."""
    taus = default_taus() if taus is None else np.asarray(taus, dtype=float)
    if np.any((taus <= 0) | (taus >= 1)) or np.any(np.diff(taus) <= 0):
        raise ValueError("taus must be increasing and inside (0, 1)")
    q, flags = invert_values(curve.index, curve.values, taus)
    return EffectCurve(taus, q, f"{curve.estimand}^-1", curve.d, flags)


def lqte(curve1, curve0, taus=None):
    """Difference of the inverted arm-1 and arm-0 curves on a shared tau grid."""
    a = quantile_invert(curve1, taus)
    b = quantile_invert(curve0, taus)
    return EffectCurve(a.index, a.values - b.values, "LQTE", None, np.maximum(a.flags, b.flags))


# ---------------------------------------------------------------------------
# estimand registry used by the estimation pipeline and the bootstrap


@dataclass(frozen=True)
class Estimand:
    """A named functional of the reduced form.

    ``family`` is ``average`` (untransformed outcome, U = 1) or
    ``distribution`` (threshold grid). ``exogenous`` estimands are computed
    with the treatment replaced by the instrument. ``index`` is ``none``,
    ``u`` or ``tau``.
    """

    name: str
    family: str
    exogenous: bool
    index: str
    kind: str
    d: int | None = None

    @property
    def smooth(self):
        """True when the functional is differentiable per grid point."""
        return self.index != "tau"

    def grid(self, u_grid, taus):
        if self.index == "none":
            return np.array([np.nan])
        return np.asarray(u_grid if self.index == "u" else taus, dtype=float)

    def evaluate(self, rho, u_grid=None, taus=None, denom_tol=DENOM_TOL):
        """Values with shape ``rho.shape[:-2] + (Q,)``; NaN where undefined.

        ``rho`` has shape (..., U, 15).
        """
        k = self.kind
        if k == "late":
            return late(rho[..., 0, :], denom_tol, strict=False)[..., None]
        if k == "late_t":
            return late_t(rho[..., 0, :], denom_tol, strict=False)[..., None]
        if k == "dte":
            return lasf(rho, 1, denom_tol, False) - lasf(rho, 0, denom_tol, False)
        if k == "dte_t":
            return lasf_t(rho, 1, denom_tol, False) - lasf_t(rho, 0, denom_tol, False)
        if k == "lasf":
            return lasf(rho, self.d, denom_tol, False)
        if k == "lasf_t":
            return lasf_t(rho, self.d, denom_tol, False)
        if k in ("qte", "qte_t"):
            fn = lasf if k == "qte" else lasf_t
            q1, _ = invert_values(u_grid, fn(rho, 1, denom_tol, False), taus)
            q0, _ = invert_values(u_grid, fn(rho, 0, denom_tol, False), taus)
            return q1 - q0
        raise ValueError(f"unknown functional {k!r}")


def _registry():
    out = {}

    def add(name, family, exo, index, kind, d=None):
        out[name] = Estimand(name, family, exo, index, kind, d)

    add("ATE", "average", True, "none", "late")
    add("ATE-T", "average", True, "none", "late_t")
    add("LATE", "average", False, "none", "late")
    add("LATE-T", "average", False, "none", "late_t")
    add("DTE", "distribution", True, "u", "dte")
    add("DTE-T", "distribution", True, "u", "dte_t")
    add("LDTE", "distribution", False, "u", "dte")
    add("LDTE-T", "distribution", False, "u", "dte_t")
    add("QTE", "distribution", True, "tau", "qte")
    add("QTE-T", "distribution", True, "tau", "qte_t")
    add("LQTE", "distribution", False, "tau", "qte")
    add("LQTE-T", "distribution", False, "tau", "qte_t")
    for d in (0, 1):
        add(f"LASF({d})", "distribution", False, "u", "lasf", d)
        add(f"LASF-T({d})", "distribution", False, "u", "lasf_t", d)
    return out


ESTIMANDS = _registry()


def get_estimand(name):
    try:
        return ESTIMANDS[name]
    except KeyError:
        raise ValueError(f"unknown estimand {name!r}; choose from {sorted(ESTIMANDS)}") from None
