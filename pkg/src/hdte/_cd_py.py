"""Pure-Python twin of the compiled coordinate-descent sweeps.

Same contract as ``hdte._cd_kernel.cd_sweeps``; used when the extension is
not built or when ``HDTE_PURE_PYTHON`` is set.
"""

import numpy as np


def cd_sweeps(X, w, r, beta, thresh, colsq, idx, max_sweeps, tol):
    n = X.shape[0]
    wr = w * r
    sweep = 0
    max_step = 0.0
    while sweep < max_sweeps:
        sweep += 1
        max_step = 0.0
        for j in idx:
            cj = colsq[j]
            if cj <= 0.0:
                beta[j] = 0.0
                continue
            xj = X[:, j]
            rho = xj.dot(wr) / n + cj * beta[j]
            t = thresh[j]
            if rho > t:
                new = (rho - t) / cj
            elif rho < -t:
                new = (rho + t) / cj
            else:
                new = 0.0
            delta = new - beta[j]
            if delta != 0.0:
                r -= delta * xj
                wr -= (delta * w) * xj
                beta[j] = new
                step = abs(delta) * np.sqrt(cj)
                if step > max_step:
                    max_step = step
        if max_step < tol:
            break
    return sweep, max_step
