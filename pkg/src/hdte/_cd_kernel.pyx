# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled coordinate-descent sweeps for weighted l1-penalized least squares.

Minimizes, over the coordinates listed in ``idx``,

    (1 / 2n) * sum_i w_i * r_i**2 + sum_j thresh_j * |beta_j|

where ``r`` is the current residual of the working response. ``r`` and
``beta`` are updated in place.
"""

from libc.math cimport fabs, sqrt


cdef inline double _soft(double rho, double t) noexcept nogil:
    if rho > t:
        return rho - t
    if rho < -t:
        return rho + t
    return 0.0


def cd_sweeps(
    const double[::1, :] X,
    const double[::1] w,
    double[::1] r,
    double[::1] beta,
    const double[::1] thresh,
    const double[::1] colsq,
    const Py_ssize_t[::1] idx,
    int max_sweeps,
    double tol,
):
    """Run cyclic sweeps over ``idx`` until the largest scaled step is < tol.

    Returns ``(sweeps_done, last_max_step)``.
    """
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t m = idx.shape[0]
    cdef Py_ssize_t i, k, j
    cdef double inv_n = 1.0 / n
    cdef double acc, rho, new, delta, step, max_step = 0.0
    cdef int sweep = 0

    with nogil:
        while sweep < max_sweeps:
            sweep += 1
            max_step = 0.0
            for k in range(m):
                j = idx[k]
                if colsq[j] <= 0.0:
                    if beta[j] != 0.0:
                        beta[j] = 0.0
                    continue
                acc = 0.0
                for i in range(n):
                    acc = acc + w[i] * X[i, j] * r[i]
                rho = acc * inv_n + colsq[j] * beta[j]
                new = _soft(rho, thresh[j]) / colsq[j]
                delta = new - beta[j]
                if delta != 0.0:
                    for i in range(n):
                        r[i] = r[i] - delta * X[i, j]
                    beta[j] = new
                    step = fabs(delta) * sqrt(colsq[j])
                    if step > max_step:
                        max_step = step
            if max_step < tol:
                break
    return sweep, max_step
