"""Synthetic data generators shared by the pipeline, CLI and acceptance tests."""

import csv

import numpy as np

from hdte.dictionary import RawData


def one_sided_iv(n=600, p=10, tau=1.0, seed=0, noise=2.0):
    """Binary instrument, one-sided compliance, constant complier effect ``tau``.

    Z depends on x0, compliance on x1, and the untreated outcome on x0..x2.
    Only compliers with Z = 1 are treated, so every LQTE equals ``tau``.
    """
    r = np.random.default_rng(seed)
    x = r.standard_normal((n, p))
    z = (r.random(n) < 1 / (1 + np.exp(-0.5 * x[:, 0]))).astype(float)
    complier = (r.random(n) < 1 / (1 + np.exp(-(0.3 + 0.5 * x[:, 1])))).astype(float)
    d = z * complier
    y0 = x[:, :3] @ np.array([1.0, 0.5, 0.5]) + noise * r.standard_normal(n)
    y = y0 + tau * d
    return RawData(y, d, z, x, tuple(f"x{j}" for j in range(p)))


def write_csv(raw, path, exogenous=False):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y", "d"] + ([] if exogenous else ["z"]) + list(raw.columns))
        for i in range(raw.n):
            row = [raw.y[i], raw.d[i]] + ([] if exogenous else [raw.z[i]]) + list(raw.x[i])
            w.writerow([repr(float(v)) for v in row])
