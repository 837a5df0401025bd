"""End-to-end estimation: dictionary -> nuisance fits -> reduced form -> effects.

Estimands sharing a reduced form (same outcome family and the same
treatment variable) share nuisance fits and bootstrap multipliers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bootstrap import Bands, bootstrap_effects, bootstrap_reduced_form, se_analytic, se_iqr, uniform_band
from .dictionary import DesignMatrix, RawData, prune_collinear, with_intercept
from .effects import DENOM_TOL, default_taus, default_u_grid, get_estimand, invert_values, lasf, lasf_t, late
from .errors import ConfigError, HDTEError
from .lasso import PenaltyConfig
from .nuisance import fit_nuisances, fit_propensity, summarize_diagnostics
from .reduced_form import ReducedForm, component_index, reduced_form_all


@dataclass(frozen=True)
class BootstrapConfig:
    B: int = 500
    kind: str = "wild"
    parameterization: str = "mean1"
    level: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.B != 0 and self.B < 4:
            raise ConfigError("bootstrap B must be 0 (off) or at least 4")
        if not 0 < self.level < 1:
            raise ConfigError("bootstrap level must lie in (0, 1)")


@dataclass(frozen=True)
class EstimationConfig:
    """Everything that determines an estimation run besides the data.

    ``u_grid`` overrides the percentile grid ``u_percentiles`` (inclusive,
    1-point steps); ``taus`` defaults to 0.10..0.90 by 0.01.
    ``known_zero`` lists ``(tag, z)`` cells of g declared identically zero.
    """

    estimands: tuple = ("LATE",)
    penalty: PenaltyConfig = PenaltyConfig()
    bootstrap: BootstrapConfig = BootstrapConfig()
    u_grid: tuple | None = None
    u_percentiles: tuple = (5, 95)
    taus: tuple | None = None
    known_zero: tuple = ()
    trim_eps: float = 1e-12
    denom_tol: float = DENOM_TOL
    intercept: bool = True
    prune_tol: float = 1e-9
    threads: int = 1

    def __post_init__(self):
        if not self.estimands:
            raise ConfigError("no estimands requested")
        for name in self.estimands:
            try:
                get_estimand(name)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        if not 0 < self.trim_eps < 0.5:
            raise ConfigError("trim_eps must lie in (0, 1/2)")


@dataclass
class EffectTable:
    """Per-estimand output: estimates over the index grid with inference."""

    estimand: str
    index: np.ndarray
    estimate: np.ndarray
    se_analytic: np.ndarray
    se_bootstrap: np.ndarray
    bands: Bands | None = None
    flags: np.ndarray | None = None
    error: str | None = None
    flagged_fraction: float = 0.0

    @property
    def ok(self):
        return self.error is None

    def rows(self):
        """(index, estimate, se_analytic, se_bootstrap, pointwise lo/hi, uniform lo/hi, flag)."""
        nan = np.full(self.index.size, np.nan)
        b = self.bands
        cols = [
            self.index,
            self.estimate,
            self.se_analytic,
            self.se_bootstrap,
            b.pointwise_lower if b else nan,
            b.pointwise_upper if b else nan,
            b.lower if b else nan,
            b.upper if b else nan,
        ]
        flags = self.flags if self.flags is not None else np.zeros(self.index.size, dtype=int)
        return [tuple(float(c[i]) for c in cols) + (int(flags[i]),) for i in range(self.index.size)]


ROW_HEADER = ("index", "estimate", "se_analytic", "se_bootstrap", "pointwise_lower",
              "pointwise_upper", "uniform_lower", "uniform_upper", "flag")


@dataclass
class EstimationResult:
    tables: dict
    reduced_forms: dict
    diagnostics: dict = field(default_factory=dict)
    u_grid: np.ndarray | None = None
    taus: np.ndarray | None = None

    @property
    def all_failed(self):
        return all(not t.ok for t in self.tables.values())


def design_for(raw: RawData, design: DesignMatrix, cfg: EstimationConfig):
    """Pruned dictionary with an optional leading intercept."""
    m = prune_collinear(with_intercept(design) if cfg.intercept else design, cfg.prune_tol)
    unpen = (0,) if cfg.intercept and m.labels and m.labels[0] == "const" else ()
    return m, unpen


def _delta_influence(est, rho, psi, u_grid, taus, tol):
    """Influence values of a per-grid-point smooth functional, (n, Q)."""
    base = est.evaluate(rho, u_grid, taus, tol)
    n = psi.shape[0]
    U = rho.shape[0]
    infl = np.zeros((n, base.size))
    for k in range(rho.shape[1]):
        h = 1e-6 * max(1.0, float(np.max(np.abs(rho[:, k]))))
        up, dn = rho.copy(), rho.copy()
        up[:, k] += h
        dn[:, k] -= h
        grad = (est.evaluate(up, u_grid, taus, tol) - est.evaluate(dn, u_grid, taus, tol)) / (2 * h)
        if base.size == U:
            infl += psi[:, :, k] * grad
        else:
            infl += psi[:, :1, k] * grad
    return infl


def _analytic_se(est, rf: ReducedForm, value, u_grid, taus, tol):
    if not est.smooth:
        return np.full(value.size, np.nan)
    if est.kind == "late":
        # ratio of orthogonal-moment means; the contrast carries the
        # linearization of the first-stage denominator
        iy1 = rf.psi[:, 0, component_index("Y", "alpha1")] + rf.rho[0, component_index("Y", "alpha1")]
        iy0 = rf.psi[:, 0, component_index("Y", "alpha0")] + rf.rho[0, component_index("Y", "alpha0")]
        j1, j0 = component_index("1_1(D)", "alpha1"), component_index("1_1(D)", "alpha0")
        den = rf.rho[0, j1] - rf.rho[0, j0]
        v = rf.psi[:, 0, j1] - rf.psi[:, 0, j0]
        contrast = iy1 - iy0 - value[0] * v
        return np.array([se_analytic(contrast, den, value[0])])
    infl = _delta_influence(est, rf.rho, rf.psi, u_grid, taus, tol)
    n = infl.shape[0]
    return np.sqrt(np.sum((infl - infl.mean(axis=0)) ** 2, axis=0) / (n - 1) / n)


def estimate(raw: RawData, design: DesignMatrix, cfg: EstimationConfig = EstimationConfig()):
    """Run every requested estimand; failures are recorded per estimand."""
    m, unpen = design_for(raw, design, cfg)
    F = m.values
    y = raw.y
    estimands = [get_estimand(e) for e in cfg.estimands]
    need_dist = any(e.family == "distribution" for e in estimands)
    u_grid = None
    if need_dist:
        if cfg.u_grid is not None:
            u_grid = np.asarray(cfg.u_grid, dtype=float)
        else:
            lo, hi = cfg.u_percentiles
            u_grid = default_u_grid(y, lo, hi)
        u_grid = np.unique(u_grid)
    taus = default_taus() if cfg.taus is None else np.asarray(cfg.taus, dtype=float)
    known = tuple(tuple(c) for c in cfg.known_zero)
    diagnostics = {"design": {"labels": list(m.labels), "dropped": list(m.dropped)}, "fits": {}}
    reduced, tables, rho_draws = {}, {}, {}
    propensities = {}

    for est in estimands:
        key = (est.family, est.exogenous)
        if key not in reduced:
            fam_u = u_grid if est.family == "distribution" else None
            d_used = raw.z if est.exogenous else raw.d
            d_u = 0 if fam_u is None else 1
            pen = PenaltyConfig(**{**cfg.penalty.__dict__, "d_u": d_u})
            try:
                if d_u not in propensities:
                    propensities[d_u] = fit_propensity(F, raw.z, pen, cfg.trim_eps, unpen)
                nus, diag = fit_nuisances(
                    F, y, d_used, raw.z, fam_u, pen, () if est.exogenous else known,
                    cfg.trim_eps, unpen, d_u, cfg.threads, propensities[d_u],
                )
                rf = reduced_form_all(y, d_used, raw.z, fam_u, nus)
                reduced[key] = rf
                diagnostics["fits"][f"{est.family}/{'exogenous' if est.exogenous else 'endogenous'}"] = (
                    summarize_diagnostics(diag, list(m.labels))
                )
                bc = cfg.bootstrap
                if bc.B:
                    rho_draws[key] = bootstrap_reduced_form(
                        rf.rho, rf.psi, bc.B, bc.kind, bc.seed, bc.parameterization
                    )
            except HDTEError as exc:
                reduced[key] = exc
        rf = reduced[key]
        grid = est.grid(u_grid, taus)
        if isinstance(rf, Exception):
            tables[est.name] = _failed(est.name, grid, rf)
            continue
        try:
            tables[est.name] = _one_estimand(est, rf, rho_draws.get(key), u_grid, taus, cfg)
        except HDTEError as exc:
            tables[est.name] = _failed(est.name, grid, exc)
    return EstimationResult(tables, reduced, diagnostics, u_grid, taus)


def _failed(name, grid, exc):
    nan = np.full(grid.size, np.nan)
    return EffectTable(name, grid, nan, nan, nan, error=f"{type(exc).__name__}: {exc}")


def _one_estimand(est, rf, draws, u_grid, taus, cfg):
    tol = cfg.denom_tol
    grid = est.grid(u_grid, taus)
    value = np.atleast_1d(est.evaluate(rf.rho, u_grid, taus, tol))
    flags = np.zeros(value.size, dtype=np.int8)
    if est.kind in ("qte", "qte_t"):
        flags = _quantile_flags(est, rf, u_grid, taus, tol)
    if est.kind == "late":
        # raises with the offending denominator if the first stage is weak
        late(rf.rho[0], tol, strict=True)
    defined = np.isfinite(value)
    if not defined.any() or (est.smooth and not defined.all()):
        bad = np.flatnonzero(~defined)
        raise HDTEError(f"{est.name} undefined at {bad.size} grid point(s), first index {grid[bad[0]]!r}")
    se_a = _analytic_se(est, rf, value, u_grid, taus, tol)
    se_b = np.full(value.size, np.nan)
    bands = None
    frac = 0.0
    if draws is not None:
        # unreached quantile levels of the point estimate are left out
        res = bootstrap_effects(rf, lambda r: est.evaluate(r, u_grid, taus, tol)[..., defined],
                                draws.B, rho_draws=draws)
        frac = res.flagged_fraction
        valid = res.valid_draws
        if valid.shape[0] >= 4:
            se_b[defined] = se_iqr(valid)
            bands = _expand_bands(
                uniform_band(value[defined], valid, cfg.bootstrap.level, se_b[defined]), defined
            )
    return EffectTable(est.name, grid, value, se_a, se_b, bands, flags, None, frac)


def _quantile_flags(est, rf, u_grid, taus, tol):
    fn = lasf if est.kind == "qte" else lasf_t
    _, f1 = invert_values(u_grid, fn(rf.rho, 1, tol, False), taus)
    _, f0 = invert_values(u_grid, fn(rf.rho, 0, tol, False), taus)
    return np.maximum(f1, f0)


def _expand_bands(b: Bands, defined):
    """Scatter per-point band arrays back onto the full grid (NaN elsewhere)."""
    out = {}
    for name, v in b.__dict__.items():
        if isinstance(v, np.ndarray) and v.shape == (int(defined.sum()),):
            full = np.full(defined.size, np.nan if v.dtype.kind == "f" else True, dtype=v.dtype)
            full[defined] = v
            out[name] = full
        else:
            out[name] = v
    return Bands(**out)
