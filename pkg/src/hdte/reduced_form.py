"""Orthogonal-moment reduced-form estimates and their influence values.

For each target variable V and instrument arm z the reduced form is

    alpha_V(z) = E[ 1(Z=z) (V - g_V(z, X)) / m(z, X) + g_V(z, X) ],

with ``g_V(z, x) = E[V | Z=z, X=x]`` and ``m(z, x) = P(Z=z | X=x)``, and
``gamma_V = E[V]``. Targets come in families of five, indexed by an
outcome threshold ``u`` when the outcome is the indicator ``1(Y <= u)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import MissingNuisanceError

TAGS = ("Y", "1_0(D)Y", "1_0(D)", "1_1(D)Y", "1_1(D)")
KINDS = ("alpha0", "alpha1", "gamma")
DIM = 3 * len(TAGS)


def component_index(tag, kind, tags=TAGS):
    """Position of ``(tag, kind)`` in the stacked per-threshold vector."""
    return 3 * tags.index(tag) + KINDS.index(kind)


def target_values(y_u, d, tag):
    """Observed V for ``tag`` given the (possibly thresholded) outcome."""
    y_u = np.asarray(y_u, dtype=float)
    d = np.asarray(d, dtype=float)
    if tag == "Y":
        return y_u
    if tag == "1_0(D)Y":
        return (1.0 - d) * y_u
    if tag == "1_0(D)":
        return 1.0 - d
    if tag == "1_1(D)Y":
        return d * y_u
    if tag == "1_1(D)":
        return d.copy()
    raise ValueError(f"unknown target tag {tag!r}")


def parse_cell(text):
    """``"1_1(D)@0"`` -> ``("1_1(D)", 0)``."""
    tag, _, z = str(text).rpartition("@")
    if tag not in TAGS or z not in ("0", "1"):
        raise ValueError(f"bad nuisance cell {text!r}; expected '<tag>@<0|1>' with tag in {TAGS}")
    return tag, int(z)


def trim_propensity(mhat, eps=1e-12):
    """Clamp into ``[eps, 1 - eps]``; returns ``(clamped, n_trimmed)``."""
    if not 0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 1/2)")
    m = np.asarray(mhat, dtype=float)
    out = np.clip(m, eps, 1.0 - eps)
    return out, int(np.count_nonzero(out != m))


@dataclass
class NuisanceSet:
    """Fitted nuisance values aligned with the data rows.

    ``ghat`` maps ``(tag, z)`` to the n-vector ``g_V(z, x_i)``; ``mhat`` is
    the trimmed ``P(Z=1 | x_i)``. Cells in ``known_zero`` are taken as
    identically zero without a fit.
    """

    ghat: dict
    mhat: np.ndarray
    trim_eps: float = 1e-12
    n_trimmed: int = 0
    known_zero: frozenset = frozenset()
    provenance: dict = field(default_factory=dict)

    def g(self, tag, z):
        if (tag, z) in self.known_zero:
            return np.zeros_like(self.mhat)
        try:
            return self.ghat[(tag, z)]
        except KeyError:
            raise MissingNuisanceError(f"no fitted nuisance for {tag}@{z}") from None

    def m(self, z):
        return self.mhat if z == 1 else 1.0 - self.mhat


def estimate_alpha(v, z, instrument, g, mhat):
    """Solve the orthogonal moment for ``alpha_V(z)``.

    Parameters
    ----------
    v : array
        Target variable.
    z : {0, 1}
        Instrument arm.
    instrument : array
        Observed instrument (0/1).
    g : array
        ``g_V(z, x_i)``.
    mhat : array
        Trimmed ``P(Z=1 | x_i)``.

    Returns
    -------
    alpha : float
    psi : array
        Influence values (integrand minus ``alpha``), mean zero.
    """
    v = np.asarray(v, dtype=float)
    g = np.asarray(g, dtype=float)
    mhat = np.asarray(mhat, dtype=float)
    mz = mhat if z == 1 else 1.0 - mhat
    hit = np.asarray(instrument) == z
    integrand = np.where(hit, (v - g) / mz, 0.0) + g
    assert np.all(np.isfinite(integrand)), "non-finite moment integrand"
    alpha = float(np.mean(integrand))
    return alpha, integrand - alpha


def estimate_gamma(v):
    """Sample mean of ``v`` and its influence values."""
    v = np.asarray(v, dtype=float)
    gamma = float(np.mean(v))
    return gamma, v - gamma


@dataclass
class ReducedForm:
    """Stacked reduced-form estimates over a threshold grid.

    ``rho`` has shape (U, 3 * len(tags)) and ``psi`` (n, U, 3 * len(tags)),
    in the order (alpha(0), alpha(1), gamma) per tag. ``u_grid`` is None for
    the untransformed-outcome family (U = 1).
    """

    rho: np.ndarray
    psi: np.ndarray
    u_grid: np.ndarray | None
    tags: tuple = TAGS
    n_trimmed: int = 0

    @property
    def n(self):
        return self.psi.shape[0]

    @property
    def labels(self):
        out = []
        for tag in self.tags:
            out += [f"alpha[{tag}](0)", f"alpha[{tag}](1)", f"gamma[{tag}]"]
        return out

    def get(self, tag, kind):
        """Estimates for one component across the grid (length U)."""
        return self.rho[:, component_index(tag, kind, self.tags)]

    def integrands(self):
        """Uncentered integrands ``psi + rho`` (n, U, d)."""
        return self.psi + self.rho[None, :, :]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["u"] + self.labels)
            grid = self.u_grid if self.u_grid is not None else [float("nan")]
            for u, row in zip(grid, self.rho):
                w.writerow([repr(float(u))] + [repr(float(x)) for x in row])
            w.writerow(["n_trimmed", self.n_trimmed] + [""] * (len(self.labels) - 1))


def reduced_form_all(y, d, z, u_grid, nuisances, tags=TAGS):
    """Reduced form for every target in ``tags`` and every threshold.

    Parameters
    ----------
    y, d, z : array
        Outcome, treatment and instrument.
    u_grid : array or None
        Thresholds; None uses ``y`` itself as the outcome (one grid point).
    nuisances : NuisanceSet or sequence of NuisanceSet
        One per grid point (a single set is reused when U = 1).
    tags : tuple
        Subset of :data:`TAGS`, in output order.
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z)
    grid = None if u_grid is None else np.asarray(u_grid, dtype=float)
    U = 1 if grid is None else grid.size
    if isinstance(nuisances, NuisanceSet):
        nuisances = [nuisances] * U
    if len(nuisances) != U:
        raise ValueError(f"need {U} nuisance sets, got {len(nuisances)}")
    n = y.size
    rho = np.empty((U, 3 * len(tags)))
    psi = np.empty((n, U, 3 * len(tags)))
    for k in range(U):
        y_u = y if grid is None else (y <= grid[k]).astype(float)
        nu = nuisances[k]
        for t, tag in enumerate(tags):
            v = target_values(y_u, d, tag)
            for zz in (0, 1):
                a, ps = estimate_alpha(v, zz, z, nu.g(tag, zz), nu.mhat)
                rho[k, 3 * t + zz] = a
                psi[:, k, 3 * t + zz] = ps
            gm, ps = estimate_gamma(v)
            rho[k, 3 * t + 2] = gm
            psi[:, k, 3 * t + 2] = ps
    return ReducedForm(rho, psi, grid, tuple(tags), nuisances[0].n_trimmed)
