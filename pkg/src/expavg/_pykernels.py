"""Pure-NumPy fallback for the monotone-hazard kernels.

Mirrors the call signatures of the compiled ``expavg._ckernels`` module.
The backend dispatcher in :mod:`expavg.backend` picks whichever is
available (the compiled one is roughly an order of magnitude faster on
the iterative convex minorant loop).
"""

from __future__ import annotations

import math

import numpy as np

BACKEND_NAME = "python"

# Event observations with cumulative hazard this small use the analytic
# small-argument limits of the likelihood derivatives.
_U_FLOOR = 1e-12


def pava(y, w):
    """Weighted least-squares isotonic (nondecreasing) regression.

    Classic pool-adjacent-violators with a block stack; O(len(y)).
    """
    y = np.ascontiguousarray(y, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    m = y.shape[0]
    if w.shape[0] != m:
        raise ValueError("pava: y and w must have equal length")
    level = np.empty(m)
    weight = np.empty(m)
    size = np.empty(m, dtype=np.int64)
    j = -1
    for i in range(m):
        j += 1
        level[j] = y[i]
        weight[j] = w[i]
        size[j] = 1
        while j > 0 and level[j - 1] >= level[j]:
            tot = weight[j - 1] + weight[j]
            level[j - 1] = (weight[j - 1] * level[j - 1] + weight[j] * level[j]) / tot
            weight[j - 1] = tot
            size[j - 1] += size[j]
            j -= 1
    out = np.empty(m)
    pos = 0
    for b in range(j + 1):
        out[pos : pos + size[b]] = level[b]
        pos += size[b]
    return out


def cs_loglik(lam, knot_idx, delta, expr, w):
    """Current-status log-likelihood at step hazard ``lam``.

    Returns -inf when some event observation sits at zero cumulative
    hazard (infeasible point), never NaN.
    """
    u = expr * lam[knot_idx]
    ev = delta > 0.5
    ue = u[ev]
    if ue.size and float(ue.min()) <= 0.0:
        return float("-inf")
    ll = float(np.dot(w[ev], np.log(-np.expm1(-ue)))) if ue.size else 0.0
    ll -= float(np.dot(w[~ev], u[~ev]))
    return ll


def grad_curv(lam, knot_idx, delta, expr, w, m):
    """Per-knot gradient and (negated) diagonal curvature of the log-likelihood."""
    u = expr * lam[knot_idx]
    ev = delta > 0.5
    g = np.empty_like(u)
    c = np.zeros_like(u)
    ue = np.maximum(u[ev], _U_FLOOR)
    q = np.exp(-ue)
    denom = -np.expm1(-ue)
    ee = expr[ev]
    g[ev] = ee * q / denom
    c[ev] = ee * ee * q / (denom * denom)
    g[~ev] = -expr[~ev]
    grad = np.bincount(knot_idx, weights=w * g, minlength=m)
    curv = np.bincount(knot_idx, weights=w * c, minlength=m)
    return grad, curv


def kkt_residual(lam, grad, cap):
    """Largest directional derivative along a feasible monotone perturbation.

    Feasible up-perturbations are block indicators ending at a strict jump
    (or at the last knot when it sits below the cap); down-perturbations
    are blocks starting at a strict jump above zero. Zero means the
    current iterate satisfies the optimality conditions.
    """
    m = lam.shape[0]
    jtol = 1e-10
    pref = np.concatenate(([0.0], np.cumsum(grad)))  # pref[h] = sum grad[:h]
    run_min = np.minimum.accumulate(pref)
    # up blocks [g, h): h has a strict jump, or h == m with headroom below cap
    up_ok = np.empty(m + 1, dtype=bool)
    up_ok[0] = False
    up_ok[1:m] = lam[1:] > lam[:-1] + jtol
    up_ok[m] = lam[m - 1] < cap - jtol
    up = 0.0
    if up_ok.any():
        hs = np.nonzero(up_ok)[0]
        up = float(np.max(pref[hs] - run_min[hs - 1]))
    # down blocks [g, h): g has a strict jump above max(previous level, 0)
    suff_min = np.minimum.accumulate(pref[::-1])[::-1]
    prev = np.concatenate(([0.0], lam[:-1]))
    down_ok = lam > np.maximum(prev, 0.0) + jtol
    down = 0.0
    if down_ok.any():
        gs = np.nonzero(down_ok)[0]
        down = float(np.max(pref[gs] - suff_min[gs + 1]))
    return max(0.0, up, down)


def _score_hess(X, lam, knot_idx, delta, expr, w, cap_free):
    """Per-observation-mean score and Hessian in the regression block,
    extended (when ``cap_free > 0``) by a hazard log-scale coordinate that
    acts only on knots strictly below the cap, so its score vanishes at a
    cap-constrained optimum."""
    n = delta.shape[0]
    lv = lam[knot_idx]
    u = expr * lv
    ev = delta > 0.5
    phi = np.empty_like(u)
    h = np.empty_like(u)
    ue = np.maximum(u[ev], _U_FLOOR)
    q = np.exp(-ue)
    denom = -np.expm1(-ue)
    p1 = ue * q / denom
    phi[ev] = p1
    h[ev] = p1 - ue * ue * q / (denom * denom)
    un = u[~ev]
    phi[~ev] = -un
    h[~ev] = -un
    if cap_free > 0.0:
        X = np.column_stack([X, (lv < cap_free).astype(np.float64)])
    S = X.T @ (w * phi) / n
    H = (X * (w * h)[:, None]).T @ X / n
    return S, H


def _expr_xi(X, xi):
    r = np.clip(X @ xi, -50.0, 50.0)
    return np.exp(r)


def fit_profile(xi0, lam0, X, knot_idx, delta, w, cap, xi_bound,
                loglik_tol, step_tol, grad_tol, icm_tol, icm_max_iter, max_outer):
    """Alternating profile fit; same contract as the compiled twin.

    The regression block is constrained to the box |xi_j| <= xi_bound and
    convergence uses the projected gradient. Returns
    ``(xi, lam, loglik, cycles, converged, grad_norm)``.
    """
    xi = np.array(xi0, dtype=np.float64, copy=True)
    lam = np.array(lam0, dtype=np.float64, copy=True)
    X = np.ascontiguousarray(X, dtype=np.float64)
    knot_idx = np.ascontiguousarray(knot_idx, dtype=np.int64)
    delta = np.ascontiguousarray(delta, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    n = delta.shape[0]
    k = X.shape[1]
    any_event = bool((delta > 0.5).any())

    expr = _expr_xi(X, xi)
    ll = cs_loglik(lam, knot_idx, delta, expr, w)
    if ll == float("-inf"):
        raise ValueError("fit_profile: infeasible starting point")

    kkt = np.inf
    prev_dll = np.inf
    prev_step = np.inf
    converged = False
    cycle = 0
    snorm = np.inf
    ke = k + 1
    cap_free = cap - 1e-9
    stall = 0
    stalled = False
    box = float(xi_bound)
    box_eps = 1e-9 * (1.0 + box)

    def projected_norm(S_core):
        sp = S_core.copy()
        sp[(xi >= box - box_eps) & (sp > 0)] = 0.0
        sp[(xi <= -box + box_eps) & (sp < 0)] = 0.0
        return float(np.linalg.norm(sp))
    while cycle < max_outer:
        cycle += 1
        ll_start = ll
        cycle_step = 0.0
        # Newton substeps in the regression block extended by the hazard
        # log-scale; the accepted scale folds into the hazard (clipped at
        # the cap)
        for ns in range(8):
            S, H = _score_hess(X, lam, knot_idx, delta, expr, w, cap_free)
            if ns == 0:
                snorm = projected_norm(S[:k])
                if (
                    prev_dll < loglik_tol
                    and prev_step < step_tol
                    and snorm <= grad_tol
                    and kkt / n <= grad_tol
                ):
                    converged = True
                    break
            # active-set reduction: coordinates pinned at a box face with an
            # outward score are frozen out of the Newton system
            active = np.zeros(ke, dtype=bool)
            active[:k] = ((xi >= box - box_eps) & (S[:k] > 0)) | (
                (xi <= -box + box_eps) & (S[:k] < 0)
            )
            free = ~active
            if not free.any():
                break
            Hf = H[np.ix_(free, free)]
            Sf = S[free]
            ridge = 0.0
            trace_abs = abs(float(np.trace(Hf)))
            L = None
            while L is None:
                try:
                    L = np.linalg.cholesky(-(Hf - ridge * np.eye(Hf.shape[0])))
                except np.linalg.LinAlgError:
                    ridge = 2.0 * ridge if ridge > 0.0 else 1e-6 * (1.0 + trace_abs)
                    if ridge > 1e12:
                        break
            if L is None:
                break
            d = np.zeros(ke)
            d[free] = np.linalg.solve(L.T, np.linalg.solve(L, Sf))
            t = 1.0
            accepted = False
            move_norm = 0.0
            while t > 1e-13:
                xi_try = np.clip(xi + t * d[:k], -box, box)
                expr = _expr_xi(X, xi_try)
                free = lam < cap_free
                lam_try = np.where(free, np.minimum(np.exp(t * d[k]) * lam, cap), lam)
                ll_new = cs_loglik(lam_try, knot_idx, delta, expr, w)
                if ll_new >= ll - 1e-12 * (1.0 + abs(ll)):
                    move_norm = math.hypot(float(np.linalg.norm(xi_try - xi)), t * d[k])
                    xi = xi_try
                    lam = lam_try
                    ll = ll_new
                    accepted = True
                    cycle_step = max(cycle_step, move_norm)
                    break
                t *= 0.5
            if not accepted:
                expr = _expr_xi(X, xi)
                break
            if move_norm < 0.25 * step_tol:
                break
        if converged:
            break
        if any_event:
            lam, ll, _, kkt, _ = icm_fit(
                lam, knot_idx, delta, expr, w, cap, icm_tol, icm_max_iter
            )
        else:
            lam = np.zeros_like(lam)
            kkt = 0.0
            ll = cs_loglik(lam, knot_idx, delta, expr, w)
        prev_dll = abs(ll - ll_start)
        prev_step = cycle_step
        # bail out of flat-ridge drifts (quasi-separated weighted data)
        if prev_dll < loglik_tol and prev_step >= step_tol:
            stall += 1
            if stall >= 150:
                stalled = True
                break
        else:
            stall = 0
        if np.abs(xi).max() > 30.0:
            break
    S, _ = _score_hess(X, lam, knot_idx, delta, expr, w, 0.0)
    snorm = projected_norm(S)
    grad_norm = max(snorm, kkt / n)
    # a stalled exit still counts as converged when stationarity is met
    if stalled and prev_dll < loglik_tol:
        converged = True
    return xi, lam, ll, cycle, bool(converged and grad_norm <= grad_tol), grad_norm


def icm_fit(lam0, knot_idx, delta, expr, w, cap, tol, max_iter):
    """Modified iterative convex minorant ascent for the step hazard.

    Each iteration projects the diagonal-Hessian Newton target onto the
    monotone cone (weighted isotonic regression, clipped to [0, cap]) and
    backtracks toward it until the Armijo sufficient-increase condition
    holds. Returns ``(lam, loglik, iterations, kkt, converged)``.
    """
    lam = np.ascontiguousarray(lam0, dtype=np.float64).copy()
    knot_idx = np.ascontiguousarray(knot_idx, dtype=np.int64)
    delta = np.ascontiguousarray(delta, dtype=np.float64)
    expr = np.ascontiguousarray(expr, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    m = lam.shape[0]
    if not (delta > 0.5).any():
        return np.zeros(m), 0.0, 0, 0.0, True
    ll = cs_loglik(lam, knot_idx, delta, expr, w)
    if ll == float("-inf"):
        raise ValueError("icm_fit: infeasible starting hazard (event at zero hazard)")
    kkt = float("inf")
    it = 0
    while it < max_iter:
        it += 1
        grad, curv = grad_curv(lam, knot_idx, delta, expr, w, m)
        kkt = kkt_residual(lam, grad, cap)
        if kkt <= tol:
            return lam, ll, it, kkt, True
        cfl = np.maximum(curv, 1e-10 * max(1.0, float(curv.max())))
        target = lam + grad / cfl
        cand = np.clip(pava(target, cfl), 0.0, cap)
        d = cand - lam
        gd = float(np.dot(grad, d))
        if gd <= 0.0:
            break
        t = 1.0
        accepted = False
        while t > 1e-13:
            trial = lam + t * d
            ll_new = cs_loglik(trial, knot_idx, delta, expr, w)
            if ll_new >= ll + 1e-4 * t * gd:
                lam = trial
                ll = ll_new
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
    grad, _ = grad_curv(lam, knot_idx, delta, expr, w, m)
    kkt = kkt_residual(lam, grad, cap)
    return lam, ll, it, kkt, kkt <= tol
