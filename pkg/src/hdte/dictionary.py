"""Control dictionaries f(X): raw-covariate transforms, interactions, pruning.

A :class:`DictionarySpec` lists per-column transforms and interaction
directives; :func:`expand` realizes it as a :class:`DesignMatrix` whose
labels trace every column back to the transform that generated it.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError

TRANSFORMS = ("identity", "power", "polynomial", "indicators", "quadratic_spline")


@dataclass(frozen=True)
class RawData:
    """Observations (y, d, z, x) with covariate names."""

    y: np.ndarray
    d: np.ndarray
    z: np.ndarray
    x: np.ndarray
    columns: tuple[str, ...]

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        d = np.asarray(self.d, dtype=float)
        z = np.asarray(self.z, dtype=float)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        n = y.shape[0]
        if d.shape != (n,) or z.shape != (n,) or x.shape[0] != n:
            raise DataError("y, d, z and x must have the same number of rows")
        if len(self.columns) != x.shape[1]:
            raise DataError("one column name per covariate is required")
        for name, v in (("d", d), ("z", z)):
            bad = np.flatnonzero((v != 0) & (v != 1))
            if bad.size:
                raise DataError(f"{name} must be binary 0/1; row {bad[0]} has {v[bad[0]]!r}")
        for name, v in (("y", y), ("x", x)):
            if not np.all(np.isfinite(v)):
                raise DataError(f"{name} contains missing or non-finite values")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "columns", tuple(self.columns))

    @property
    def n(self):
        return self.y.shape[0]

    def column(self, name):
        try:
            return self.x[:, self.columns.index(name)]
        except ValueError:
            raise ConfigError(f"unknown column {name!r}") from None


def read_csv(path, y, d, z=None, covariates=None) -> RawData:
    """Load an RFC-4180 CSV with a header row.

    ``z=None`` means the exogenous case and sets z equal to d. Covariates
    default to every column not used as y, d or z. Malformed or incomplete
    rows raise :class:`DataError` naming the offending line.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        roles = [y, d] + ([z] if z is not None else [])
        for name in roles:
            if name not in header:
                raise DataError(f"{path}: column {name!r} not in header")
        if covariates is None:
            covariates = [h for h in header if h not in roles]
        for name in covariates:
            if name not in header:
                raise DataError(f"{path}: covariate {name!r} not in header")
        wanted = [header.index(c) for c in [y, d, z if z is not None else d, *covariates]]
        rows = []
        for rec in reader:
            if not rec or (len(rec) == 1 and not rec[0].strip()):
                continue
            if len(rec) != len(header):
                raise DataError(
                    f"{path}: line {reader.line_num}: expected {len(header)} fields, got {len(rec)}"
                )
            vals = []
            for k in wanted:
                cell = rec[k].strip()
                if cell == "" or cell.upper() in ("NA", "NAN", "NULL"):
                    raise DataError(
                        f"{path}: line {reader.line_num}: missing value in column {header[k]!r}"
                    )
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: line {reader.line_num}: non-numeric value {cell!r} "
                        f"in column {header[k]!r}"
                    ) from None
            rows.append(vals)
    if len(rows) < 2:
        raise DataError(f"{path}: need at least two data rows")
    arr = np.array(rows, dtype=float)
    try:
        return RawData(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3:], tuple(covariates))
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


@dataclass(frozen=True)
class Term:
    """One raw-column transform.

    ``transform`` is one of identity, power (x**k only), polynomial
    (x, ..., x**k), indicators (one dummy per category formed by ``cuts``)
    or quadratic_spline (x, x**2, regime dummies, and x, x**2 times each
    regime dummy, with regimes formed by ``cuts``).
    """

    column: str
    transform: str = "identity"
    k: int = 1
    cuts: tuple[float, ...] = ()
    group: str | None = None

    def __post_init__(self):
        if self.transform not in TRANSFORMS:
            raise ConfigError(f"unknown transform {self.transform!r} for column {self.column!r}")
        if self.transform in ("power", "polynomial") and int(self.k) < 1:
            raise ConfigError(f"power k must be >= 1 (column {self.column!r})")
        cuts = tuple(float(c) for c in self.cuts)
        if self.transform in ("indicators", "quadratic_spline"):
            if not cuts:
                raise ConfigError(f"{self.transform} on {self.column!r} needs cut points")
            if any(b <= a for a, b in zip(cuts, cuts[1:])):
                raise ConfigError(f"cut points for {self.column!r} must be strictly increasing")
        object.__setattr__(self, "cuts", cuts)
        object.__setattr__(self, "k", int(self.k))

    @property
    def group_name(self):
        return self.group if self.group is not None else self.column


@dataclass(frozen=True)
class Interaction:
    """Pairwise products between term groups; the result forms group ``name``."""

    groups: tuple[str, ...]
    name: str | None = None

    @property
    def group_name(self):
        return self.name if self.name is not None else "*".join(self.groups)


@dataclass(frozen=True)
class DictionarySpec:
    terms: tuple[Term, ...]
    interactions: tuple[Interaction, ...] = ()
    standardize: bool = False

    @classmethod
    def from_dict(cls, doc):
        try:
            terms = tuple(
                Term(
                    column=t["column"],
                    transform=t.get("transform", "identity"),
                    k=t.get("k", 1),
                    cuts=tuple(t.get("cuts", ())),
                    group=t.get("group"),
                )
                for t in doc["terms"]
            )
            inter = tuple(
                Interaction(groups=tuple(i["groups"]), name=i.get("name"))
                for i in doc.get("interactions", ())
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed dictionary spec: {exc!r}") from None
        return cls(terms, inter, bool(doc.get("standardize", False)))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    @classmethod
    def identity(cls, columns):
        return cls(tuple(Term(c) for c in columns))


@dataclass(frozen=True)
class DesignMatrix:
    """An n x p dictionary with one label per column.

    ``groups`` maps group names to column indices; ``dropped`` lists labels
    removed by :func:`prune_collinear`.
    """

    values: np.ndarray
    labels: tuple[str, ...]
    groups: dict = field(default_factory=dict)
    dropped: tuple[str, ...] = ()
    all_dropped: bool = False

    @property
    def p(self):
        return self.values.shape[1]

    @property
    def n(self):
        return self.values.shape[0]


def _regimes(v, cuts):
    return np.searchsorted(np.asarray(cuts), v, side="right")


def _term_columns(term: Term, v: np.ndarray):
    name = term.column
    t = term.transform
    if t == "identity":
        return [v.copy()], [name]
    if t == "power":
        return [v ** term.k], [f"{name}^{term.k}" if term.k > 1 else name]
    if t == "polynomial":
        cols = [v ** k for k in range(1, term.k + 1)]
        return cols, [name if k == 1 else f"{name}^{k}" for k in range(1, term.k + 1)]
    reg = _regimes(v, term.cuts)
    dummies = [(reg == r).astype(float) for r in range(len(term.cuts) + 1)]
    dlabels = [f"{name}[r{r}]" for r in range(len(term.cuts) + 1)]
    if t == "indicators":
        return dummies, dlabels
    # quadratic spline: x, x^2, regime dummies, and both powers times each dummy
    sq = v ** 2
    cols = [v.copy(), sq] + dummies + [v * dm for dm in dummies] + [sq * dm for dm in dummies]
    labels = (
        [name, f"{name}^2"]
        + dlabels
        + [f"{name}*{dl}" for dl in dlabels]
        + [f"{name}^2*{dl}" for dl in dlabels]
    )
    return cols, labels


def _check_finite(cols, labels):
    for c, lab in zip(cols, labels):
        if not np.all(np.isfinite(c)):
            raise DataError(f"non-finite value produced in column {lab!r}")


def expand(raw: RawData, spec: DictionarySpec) -> DesignMatrix:
    """Realize ``spec`` on ``raw``.

    Columns come out in term order, followed by interaction directives in
    the order given (each directive may use groups created by earlier ones).
    """
    if raw.n < 2:
        raise DataError("need n >= 2 observations")
    cols, labels = [], []
    groups: dict[str, list[int]] = {}
    with np.errstate(over="ignore", invalid="ignore"):
        for term in spec.terms:
            v = raw.column(term.column)
            tc, tl = _term_columns(term, v)
            _check_finite(tc, tl)
            start = len(cols)
            cols.extend(tc)
            labels.extend(tl)
            groups.setdefault(term.group_name, []).extend(range(start, len(cols)))
    m = DesignMatrix(np.column_stack(cols) if cols else np.empty((raw.n, 0)), tuple(labels), groups)
    for inter in spec.interactions:
        try:
            idx = [m.groups[g] for g in inter.groups]
        except KeyError as exc:
            raise ConfigError(f"interaction references unknown group {exc.args[0]!r}") from None
        m = interact_groups(m, idx, name=inter.group_name)
    if spec.standardize:
        rms = np.sqrt(np.mean(m.values ** 2, axis=0))
        rms[rms == 0] = 1.0
        m = DesignMatrix(m.values / rms, m.labels, m.groups)
    return m


def interact_groups(m: DesignMatrix, groups: Sequence[Sequence[int]], name=None) -> DesignMatrix:
    """Append products between every pair of distinct groups.

    Products of a column with itself are skipped, and a pair that was
    already produced (b*a after a*b) is not repeated. The new columns are
    registered as group ``name``.
    """
    if len(groups) < 2:
        raise ConfigError("interaction needs at least two groups")
    for g in groups:
        if len(g) == 0:
            raise ConfigError("interaction group is empty")
        for j in g:
            if not 0 <= j < m.p:
                raise ConfigError(f"column index {j} out of range for p={m.p}")
    new_cols, new_labels, seen = [], [], set()
    for gi in range(len(groups)):
        for gj in range(gi + 1, len(groups)):
            for a in groups[gi]:
                for b in groups[gj]:
                    key = frozenset((a, b))
                    if a == b or key in seen:
                        continue
                    seen.add(key)
                    new_cols.append(m.values[:, a] * m.values[:, b])
                    new_labels.append(f"{m.labels[a]}*{m.labels[b]}")
    _check_finite(new_cols, new_labels)
    start = m.p
    values = np.column_stack([m.values] + new_cols) if new_cols else m.values.copy()
    grp = {k: list(v) for k, v in m.groups.items()}
    if name is None:
        name = f"interaction{len(grp)}"
    grp[name] = list(range(start, start + len(new_cols)))
    return DesignMatrix(values, m.labels + tuple(new_labels), grp, m.dropped)


def independent_columns(A: np.ndarray, tol=1e-9) -> np.ndarray:
    """Boolean mask of columns kept by a greedy left-to-right scan.

    A column is dropped iff its residual after projection on the columns
    already kept has norm <= tol * (its own norm). Zero columns are dropped.
    """
    A = np.asarray(A, dtype=float)
    n, p = A.shape
    keep = np.zeros(p, dtype=bool)
    Q = np.empty((n, min(n, p)))
    r = 0
    for j in range(p):
        c = A[:, j]
        nrm = np.linalg.norm(c)
        if nrm == 0.0 or r == n:
            continue
        res = c.copy()
        if r:
            Qr = Q[:, :r]
            res -= Qr @ (Qr.T @ res)
            res -= Qr @ (Qr.T @ res)
        rn = np.linalg.norm(res)
        if rn <= tol * nrm:
            continue
        Q[:, r] = res / rn
        r += 1
        keep[j] = True
    return keep


def prune_collinear(m: DesignMatrix, tol=1e-9) -> DesignMatrix:
    """Drop columns that are (numerically) linear combinations of earlier ones."""
    if not tol > 0:
        raise ConfigError("tol must be positive")
    keep = independent_columns(m.values, tol)
    kept = np.flatnonzero(keep)
    remap = {int(old): new for new, old in enumerate(kept)}
    groups = {
        g: [remap[j] for j in idx if j in remap] for g, idx in m.groups.items()
    }
    dropped = tuple(lab for lab, k in zip(m.labels, keep) if not k)
    return DesignMatrix(
        m.values[:, kept],
        tuple(m.labels[j] for j in kept),
        groups,
        m.dropped + dropped,
        all_dropped=bool(m.p > 0 and kept.size == 0),
    )


def build_z_design(m: DesignMatrix, z) -> DesignMatrix:
    """Rows ((1 - z_i) f(x_i)', z_i f(x_i)'), 2p columns."""
    z = np.asarray(z, dtype=float)
    if z.shape != (m.n,):
        raise DataError(f"z has length {z.shape[0] if z.ndim else 0}, design has {m.n} rows")
    if np.any((z != 0) & (z != 1)):
        raise DataError("z must be binary 0/1")
    F = m.values
    values = np.hstack([(1.0 - z)[:, None] * F, z[:, None] * F])
    labels = tuple(f"(1-z)*{lab}" for lab in m.labels) + tuple(f"z*{lab}" for lab in m.labels)
    return DesignMatrix(values, labels, {"z0": list(range(m.p)), "z1": list(range(m.p, 2 * m.p))})


def with_intercept(m: DesignMatrix, label="const") -> DesignMatrix:
    """Prepend a column of ones."""
    groups = {g: [j + 1 for j in idx] for g, idx in m.groups.items()}
    groups[label] = [0]
    return DesignMatrix(
        np.column_stack([np.ones(m.n), m.values]), (label,) + m.labels, groups, m.dropped
    )

