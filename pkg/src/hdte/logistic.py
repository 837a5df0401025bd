"""l1-penalized logistic regression and post-selection logistic refits.

The penalized problem is solved by proximal Newton: each outer step builds
the IRLS quadratic model of the negative log-likelihood and minimizes it
plus the weighted-l1 penalty with the shared coordinate-descent kernel,
followed by a backtracking line search on the true objective.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, log_expit

from .dictionary import independent_columns
from .errors import ConvergenceError, UnboundedProblemError
from .lasso import (
    PenaltyConfig,
    PenalizedFit,
    floor_loadings,
    kkt_residual,
    solve_weighted_l1,
)

SEPARATION_CAP = 30.0

# same record as the linear fit, with link="logistic" and separation_flag
LogisticFit = PenalizedFit


def logistic_loss(F, y, theta):
    """E_n[-y log L(f'theta) - (1 - y) log(1 - L(f'theta))]."""
    t = np.asarray(F) @ theta
    return float(np.mean(-y * log_expit(t) - (1.0 - y) * log_expit(-t)))


def logistic_score(F, y, theta):
    """Gradient of :func:`logistic_loss`: E_n[f (L(f'theta) - y)]."""
    F = np.asarray(F)
    return F.T @ (expit(F @ theta) - y) / F.shape[0]


def penalized_objective(F, y, theta, lam, loadings):
    n = np.asarray(F).shape[0]
    return logistic_loss(F, y, theta) + lam / n * float(np.sum(loadings * np.abs(theta)))


def initial_loadings_logistic(F, floor=1e-6, unpenalized=()):
    """``0.5 * sqrt(E_n[f_j^2])``, floored."""
    F = np.asarray(F, dtype=float)
    raw = 0.5 * np.sqrt(np.mean(F ** 2, axis=0))
    return floor_loadings(raw, F, floor, unpenalized)


def _check_bounded(F, y, thresh):
    free = (thresh == 0) & np.any(F != 0, axis=0)
    if np.any(free) and (np.all(y == 0) or np.all(y == 1)):
        raise UnboundedProblemError(
            "constant response with unpenalized column(s) "
            f"{np.flatnonzero(free).tolist()}: likelihood has no finite maximizer"
        )


def fit_l1_logistic(F, y, lam, loadings, theta0=None, kkt_tol=1e-7, max_newton=100,
                    max_sweeps=None, return_info=False):
    """Minimize the penalized negative log-likelihood; returns theta.

    Raises :class:`ConvergenceError` if the KKT residual is still above
    ``kkt_tol`` after ``max_newton`` outer steps.
    """
    F = np.asfortranarray(F, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = F.shape
    if np.any((y != 0) & (y != 1)):
        raise ValueError("y must be binary 0/1")
    thresh = np.ascontiguousarray(lam / n * np.asarray(loadings, dtype=float))
    if np.any(thresh < 0) or not np.all(np.isfinite(thresh)):
        raise ValueError("loadings must be finite and non-negative")
    _check_bounded(F, y, thresh)
    theta = np.zeros(p) if theta0 is None else np.array(theta0, dtype=float)
    obj = penalized_objective(F, y, theta, lam, loadings)
    history = [obj]
    kkt = np.inf
    for step in range(max_newton):
        eta = F @ theta
        prob = expit(eta)
        score = F.T @ (y - prob) / n
        kkt = kkt_residual(score, theta, thresh)
        if kkt <= kkt_tol:
            break
        w = np.maximum(prob * (1.0 - prob), 1e-12)
        r = np.ascontiguousarray((y - prob) / w)
        beta = theta.copy()
        colsq = np.ascontiguousarray((F ** 2).T @ w / n)
        solve_weighted_l1(F, w, r, beta, thresh, colsq, min(1e-3 * kkt, kkt_tol), max_sweeps)
        direction = beta - theta
        pen_old = float(np.sum(thresh * np.abs(theta)))
        decrease = -score @ direction + float(np.sum(thresh * np.abs(beta))) - pen_old
        if not decrease < 0:
            break
        t = 1.0
        accepted = False
        for _ in range(60):
            cand = theta + t * direction
            new_obj = penalized_objective(F, y, cand, lam, loadings)
            if new_obj <= obj + 1e-4 * t * decrease:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # no representable decrease left; the KKT check below decides
            break
        theta = cand
        if np.max(np.abs(F @ theta)) > 700:
            raise UnboundedProblemError("linear index diverged; likelihood is unbounded")
        obj = new_obj
        history.append(obj)
    else:
        step = max_newton
    score = F.T @ (y - expit(F @ theta)) / n
    kkt = kkt_residual(score, theta, thresh)
    if kkt > kkt_tol:
        raise ConvergenceError(f"l1-logistic did not converge in {step} Newton steps", kkt)
    if return_info:
        return theta, {"kkt": kkt, "newton_steps": step, "objective_history": history}
    return theta


def refit_logistic(F, y, support, cap=SEPARATION_CAP, max_iter=100, rel_tol=1e-10):
    """Unpenalized logistic MLE on ``support`` by damped Newton.

    Coefficients that run past ``cap`` in absolute value (quasi-separation)
    are frozen at +/- cap. A singular Hessian gets a ridge of
    ``1e-8 * trace / k``. Returns ``(theta, info)`` where ``info`` carries
    ``separation_flag``, ``jitter_flag``, ``dropped`` and ``score``.
    """
    F = np.asarray(F, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = F.shape
    support = np.asarray(sorted(set(int(j) for j in support)), dtype=np.intp)
    theta = np.zeros(p)
    info = {"separation_flag": False, "jitter_flag": False, "dropped": (), "iterations": 0,
            "score": 0.0}
    if support.size == 0:
        return theta, info
    keep = independent_columns(F[:, support], 1e-9)
    info["dropped"] = tuple(int(j) for j in support[~keep])
    cols = support[keep]
    if cols.size == 0:
        return theta, info
    X = F[:, cols]
    b = np.zeros(cols.size)
    frozen = np.zeros(cols.size, dtype=bool)

    def nll(coef):
        t = X @ coef
        return float(np.mean(-y * log_expit(t) - (1.0 - y) * log_expit(-t)))

    f = nll(b)
    it = 0
    for it in range(1, max_iter + 1):
        prob = expit(X @ b)
        g = X.T @ (y - prob) / n
        free = ~frozen
        if not np.any(free):
            break
        gf = g[free]
        Xf = X[:, free]
        H = (Xf * (prob * (1.0 - prob))[:, None]).T @ Xf / n
        try:
            c = np.linalg.cholesky(H)
            step = np.linalg.solve(c.T, np.linalg.solve(c, gf))
        except np.linalg.LinAlgError:
            info["jitter_flag"] = True
            jitter = 1e-8 * max(np.trace(H), 1e-300) / H.shape[0]
            step = np.linalg.solve(H + jitter * np.eye(H.shape[0]), gf)
        decrement = float(gf @ step)
        t = 1.0
        while True:
            cand = b.copy()
            cand[free] = b[free] + t * step
            over = np.abs(cand) > cap
            cand[over] = np.sign(cand[over]) * cap
            fc = nll(cand)
            if fc <= f + 1e-4 * t * -decrement or t < 1e-10:
                break
            t *= 0.5
        newly = np.abs(cand) >= cap
        if np.any(newly & ~frozen):
            info["separation_flag"] = True
            frozen |= newly
        change = f - fc
        b, f = cand, fc
        if decrement < 1e-24 or (0 <= change <= rel_tol * max(abs(f), 1e-300) and decrement < 1e-20):
            break
    prob = expit(X @ b)
    g = X.T @ (y - prob) / n
    info["iterations"] = it
    info["score"] = float(np.max(np.abs(g[~frozen]))) if np.any(~frozen) else 0.0
    theta[cols] = b
    return theta, info


def fit_with_iterated_loadings_logistic(F, y, cfg: PenaltyConfig = PenaltyConfig(), lam=None,
                                        p_eff=None, unpenalized=(),
                                        cap=SEPARATION_CAP) -> PenalizedFit:
    """Logistic analogue of :func:`hdte.lasso.fit_with_iterated_loadings`.

    Loadings are updated with residuals ``y - L(f'theta_post)``; no trimming
    is applied inside the loop.
    """
    F = np.asfortranarray(F, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = F.shape
    if lam is None:
        lam = cfg.lam(n, p_eff or p)
    unpen = tuple(int(j) for j in unpenalized)
    loadings = initial_loadings_logistic(F, cfg.loading_floor, unpen)
    theta = np.zeros(p)
    converged = False
    it = 0
    for it in range(1, cfg.K + 1):
        theta, linfo = fit_l1_logistic(F, y, lam, loadings, theta, cfg.kkt_tol,
                                       max_sweeps=cfg.max_sweeps, return_info=True)
        support = np.union1d(np.flatnonzero(theta), unpen).astype(np.intp)
        post, info = refit_logistic(F, y, support, cap=cap)
        post_ok = not info["dropped"]
        resid = y - expit(F @ (post if post_ok else theta))
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
        theta_post=post,
        loadings=loadings,
        lam=float(lam),
        iterations_used=it,
        objective_value=penalized_objective(F, y, theta, lam, loadings),
        kkt_residual=linfo["kkt"],
        loadings_converged=converged,
        refit_flag=bool(info["dropped"] or info["jitter_flag"]),
        refit_dropped=info["dropped"],
        lasso_residual_loadings=not post_ok,
        link="logistic",
        separation_flag=info["separation_flag"],
        unpenalized=unpen,
    )
