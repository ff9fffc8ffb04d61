# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled monotone-hazard kernels.

Same contracts as ``expavg._pykernels``; this module carries the hot
inner loops of the iterative convex minorant fit in C.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, expm1, log, sqrt, INFINITY

cnp.import_array()

BACKEND_NAME = "c"

cdef double _U_FLOOR = 1e-12


def pava(y, w):
    """Weighted least-squares isotonic (nondecreasing) regression."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ya = np.ascontiguousarray(y, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] wa = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t m = ya.shape[0]
    if wa.shape[0] != m:
        raise ValueError("pava: y and w must have equal length")
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] level = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] weight = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] size = np.empty(m, dtype=np.int64)
    _pava_core(&ya[0], &wa[0], &out[0], &level[0], &weight[0], &size[0], m)
    return out


cdef void _pava_core(double* y, double* w, double* out,
                     double* level, double* weight, cnp.int64_t* size,
                     Py_ssize_t m) noexcept nogil:
    cdef Py_ssize_t i, j = -1, b, pos
    cdef double tot
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
    pos = 0
    for b in range(j + 1):
        for i in range(size[b]):
            out[pos] = level[b]
            pos += 1


cdef double _loglik(double* lam, cnp.int64_t* kix, double* delta, double* expr,
                    double* w, Py_ssize_t n) noexcept nogil:
    cdef double ll = 0.0, u
    cdef Py_ssize_t i
    for i in range(n):
        u = expr[i] * lam[kix[i]]
        if delta[i] > 0.5:
            if u <= 0.0:
                return -INFINITY
            ll += w[i] * log(-expm1(-u))
        else:
            ll -= w[i] * u
    return ll


cdef void _grad_curv(double* lam, cnp.int64_t* kix, double* delta, double* expr,
                     double* w, Py_ssize_t n, double* grad, double* curv,
                     Py_ssize_t m) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef double u, q, denom, e
    for k in range(m):
        grad[k] = 0.0
        curv[k] = 0.0
    for i in range(n):
        k = kix[i]
        e = expr[i]
        u = e * lam[k]
        if delta[i] > 0.5:
            if u < _U_FLOOR:
                u = _U_FLOOR
            q = exp(-u)
            denom = -expm1(-u)
            grad[k] += w[i] * e * q / denom
            curv[k] += w[i] * e * e * q / (denom * denom)
        else:
            grad[k] -= w[i] * e
    # done


cdef double _kkt(double* lam, double* grad, double cap, double* pref,
                 double* scratch, Py_ssize_t m) noexcept nogil:
    cdef double jtol = 1e-10
    cdef Py_ssize_t h, g
    cdef double up = 0.0, down = 0.0, run, val, prev
    pref[0] = 0.0
    for h in range(m):
        pref[h + 1] = pref[h] + grad[h]
    # up blocks: running min of pref[0..h-1]
    run = pref[0]
    for h in range(1, m + 1):
        if (h < m and lam[h] > lam[h - 1] + jtol) or (h == m and lam[m - 1] < cap - jtol):
            val = pref[h] - run
            if val > up:
                up = val
        if pref[h] < run:
            run = pref[h]
    # down blocks: suffix min of pref[g+1..m] stored in scratch
    scratch[m] = pref[m]
    for g in range(m - 1, -1, -1):
        scratch[g] = pref[g] if pref[g] < scratch[g + 1] else scratch[g + 1]
    for g in range(m):
        prev = lam[g - 1] if g > 0 else 0.0
        if prev < 0.0:
            prev = 0.0
        if lam[g] > prev + jtol:
            val = pref[g] - scratch[g + 1]
            if val > down:
                down = val
    if up < 0.0:
        up = 0.0
    if down < 0.0:
        down = 0.0
    return up if up > down else down


def cs_loglik(lam, knot_idx, delta, expr, w):
    """Current-status log-likelihood at step hazard ``lam`` (-inf if infeasible)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] la = np.ascontiguousarray(lam, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] ka = np.ascontiguousarray(knot_idx, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] da = np.ascontiguousarray(delta, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ea = np.ascontiguousarray(expr, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] wa = np.ascontiguousarray(w, dtype=np.float64)
    return _loglik(&la[0], &ka[0], &da[0], &ea[0], &wa[0], da.shape[0])


def grad_curv(lam, knot_idx, delta, expr, w, m):
    """Per-knot gradient and (negated) diagonal curvature of the log-likelihood."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] la = np.ascontiguousarray(lam, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] ka = np.ascontiguousarray(knot_idx, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] da = np.ascontiguousarray(delta, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ea = np.ascontiguousarray(expr, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] wa = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t mm = m
    cdef cnp.ndarray[cnp.float64_t, ndim=1] grad = np.empty(mm, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] curv = np.empty(mm, dtype=np.float64)
    _grad_curv(&la[0], &ka[0], &da[0], &ea[0], &wa[0], da.shape[0], &grad[0], &curv[0], mm)
    return grad, curv


def kkt_residual(lam, grad, cap):
    """Largest directional derivative along a feasible monotone perturbation."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] la = np.ascontiguousarray(lam, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ga = np.ascontiguousarray(grad, dtype=np.float64)
    cdef Py_ssize_t m = la.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] pref = np.empty(m + 1, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] scratch = np.empty(m + 1, dtype=np.float64)
    return _kkt(&la[0], &ga[0], cap, &pref[0], &scratch[0], m)


cdef double _icm_core(double* lam, cnp.int64_t* kix, double* delta, double* expr,
                      double* w, Py_ssize_t n, Py_ssize_t m, double cap, double tol,
                      int max_iter, double ll,
                      double* grad, double* curv, double* cfl, double* target,
                      double* cand, double* trial, double* level, double* bweight,
                      cnp.int64_t* bsize, double* pref, double* scratch,
                      double* kkt_out, int* iters_out) noexcept nogil:
    """Shared ICM ascent loop; updates lam in place and returns the loglik."""
    cdef Py_ssize_t i
    cdef int it = 0
    cdef double kkt = INFINITY, cmax, floor_val, gd, t, ll_new
    cdef bint accepted
    while it < max_iter:
        it += 1
        _grad_curv(lam, kix, delta, expr, w, n, grad, curv, m)
        kkt = _kkt(lam, grad, cap, pref, scratch, m)
        if kkt <= tol:
            kkt_out[0] = kkt
            iters_out[0] = it
            return ll
        cmax = 1.0
        for i in range(m):
            if curv[i] > cmax:
                cmax = curv[i]
        floor_val = 1e-10 * cmax
        for i in range(m):
            cfl[i] = curv[i] if curv[i] > floor_val else floor_val
            target[i] = lam[i] + grad[i] / cfl[i]
        _pava_core(target, cfl, cand, level, bweight, bsize, m)
        gd = 0.0
        for i in range(m):
            if cand[i] < 0.0:
                cand[i] = 0.0
            elif cand[i] > cap:
                cand[i] = cap
            cand[i] -= lam[i]
            gd += grad[i] * cand[i]
        if gd <= 0.0:
            break
        t = 1.0
        accepted = False
        while t > 1e-13:
            for i in range(m):
                trial[i] = lam[i] + t * cand[i]
            ll_new = _loglik(trial, kix, delta, expr, w, n)
            if ll_new >= ll + 1e-4 * t * gd:
                for i in range(m):
                    lam[i] = trial[i]
                ll = ll_new
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
    _grad_curv(lam, kix, delta, expr, w, n, grad, curv, m)
    kkt = _kkt(lam, grad, cap, pref, scratch, m)
    kkt_out[0] = kkt
    iters_out[0] = it
    return ll


cdef bint _chol_small(double* A, double* L, int k) noexcept nogil:
    """Cholesky of a k x k (k <= 3) matrix stored row-major; False if not PD."""
    cdef int i, j, r
    cdef double s
    for i in range(k):
        for j in range(i + 1):
            s = A[i * k + j]
            for r in range(j):
                s -= L[i * k + r] * L[j * k + r]
            if i == j:
                if s <= 0.0:
                    return False
                L[i * k + i] = sqrt(s)
            else:
                L[i * k + j] = s / L[j * k + j]
    return True


cdef void _chol_solve_small(double* L, double* b, double* x, int k) noexcept nogil:
    cdef int i, r
    cdef double s
    for i in range(k):
        s = b[i]
        for r in range(i):
            s -= L[i * k + r] * x[r]
        x[i] = s / L[i * k + i]
    for i in range(k - 1, -1, -1):
        s = x[i]
        for r in range(i + 1, k):
            s -= L[r * k + i] * x[r]
        x[i] = s / L[i * k + i]


cdef void _expr_xi(double* X, double* xi, double* expr, Py_ssize_t n, int k) noexcept nogil:
    cdef Py_ssize_t i
    cdef int j
    cdef double r
    for i in range(n):
        r = 0.0
        for j in range(k):
            r += X[i * k + j] * xi[j]
        if r > 50.0:
            r = 50.0
        elif r < -50.0:
            r = -50.0
        expr[i] = exp(r)


cdef void _score_hess(double* X, double* lam, cnp.int64_t* kix, double* delta,
                      double* expr, double* w, Py_ssize_t n, int k, double cap_free,
                      double* S, double* H) noexcept nogil:
    """Per-observation-mean score and Hessian of the loglik in the regression
    block, extended (when ``cap_free > 0``) by a hazard log-scale coordinate
    that acts only on knots strictly below the cap, so its score vanishes at
    a cap-constrained optimum."""
    cdef Py_ssize_t i
    cdef int a, b, ke = k + 1 if cap_free > 0.0 else k
    cdef double u, q, denom, phi, h, wphi, wh, xa, xb, lv
    for a in range(ke):
        S[a] = 0.0
        for b in range(ke):
            H[a * ke + b] = 0.0
    for i in range(n):
        lv = lam[kix[i]]
        u = expr[i] * lv
        if delta[i] > 0.5:
            if u < _U_FLOOR:
                u = _U_FLOOR
            q = exp(-u)
            denom = -expm1(-u)
            phi = u * q / denom
            h = phi - u * u * q / (denom * denom)
        else:
            phi = -u
            h = -u
        wphi = w[i] * phi
        wh = w[i] * h
        for a in range(ke):
            if a < k:
                xa = X[i * k + a]
            else:
                xa = 1.0 if lv < cap_free else 0.0
            S[a] += wphi * xa
            for b in range(a + 1):
                if b < k:
                    xb = X[i * k + b]
                else:
                    xb = 1.0 if lv < cap_free else 0.0
                H[a * ke + b] += wh * xa * xb
    for a in range(ke):
        S[a] /= n
        for b in range(a + 1):
            H[a * ke + b] /= n
            H[b * ke + a] = H[a * ke + b]


def fit_profile(xi0, lam0, X, knot_idx, delta, w, cap, xi_bound,
                loglik_tol, step_tol, grad_tol, icm_tol, icm_max_iter, max_outer):
    """Alternating profile fit: safeguarded Newton steps in the regression
    block (constrained to the box |xi_j| <= xi_bound), then an ICM pass for
    the hazard, until the joint log-likelihood, step norm, and
    projected-gradient criteria hold.

    Returns ``(xi, lam, loglik, cycles, converged, grad_norm)``.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xi = np.array(xi0, dtype=np.float64, copy=True)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] lam = np.array(lam0, dtype=np.float64, copy=True)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] Xa = np.ascontiguousarray(X, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] kix = np.ascontiguousarray(knot_idx, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] da = np.ascontiguousarray(delta, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] wa = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t n = da.shape[0], m = lam.shape[0]
    cdef int k = <int> Xa.shape[1]
    if k > 3:
        raise ValueError("fit_profile supports at most 3 regression parameters")
    cdef double dcap = cap, ll_tol = loglik_tol, s_tol = step_tol, g_tol = grad_tol
    cdef double i_tol = icm_tol
    cdef int i_max = icm_max_iter, outer_max = max_outer

    cdef cnp.ndarray[cnp.float64_t, ndim=1] expr = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] grad = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] curv = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cfl = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] target = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cand = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] trial = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] level = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] bweight = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] bsize = np.empty(m, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] pref = np.empty(m + 1, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] scratch = np.empty(m + 1, dtype=np.float64)

    cdef double S[4]
    cdef double H[16]
    cdef double A[16]
    cdef double L[16]
    cdef double d[4]
    cdef double xi_try[4]
    cdef double Sr[4]
    cdef double dr[4]
    cdef int freeidx[4]
    cdef int nfree
    cdef double ll, ll_new, snorm, kkt = INFINITY, prev_dll = INFINITY, prev_step = INFINITY
    cdef double ridge, trace_abs, t, cycle_step, stepnorm, ll_start, scale, xi_abs, sp, move
    cdef double cap_free = dcap - 1e-9
    cdef double box = xi_bound, box_eps
    cdef int cycle = 0, ns, a, b, icm_iters, ke = k + 1, stall = 0
    cdef bint converged = False, ok, accepted, any_event = False, stalled = False
    cdef Py_ssize_t i
    box_eps = 1e-9 * (1.0 + box)

    for i in range(n):
        if da[i] > 0.5:
            any_event = True
            break

    _expr_xi(&Xa[0, 0], &xi[0], &expr[0], n, k)
    ll = _loglik(&lam[0], &kix[0], &da[0], &expr[0], &wa[0], n)
    if ll == -INFINITY:
        raise ValueError("fit_profile: infeasible starting point")

    with nogil:
        while cycle < outer_max:
            cycle += 1
            ll_start = ll
            cycle_step = 0.0
            # Newton substeps in the regression block extended by the hazard
            # log-scale; the accepted scale folds into the hazard (clipped
            # at the cap) so the dominant scale/regression coupling is
            # handled inside the block rather than by slow alternation.
            for ns in range(8):
                _score_hess(&Xa[0, 0], &lam[0], &kix[0], &da[0], &expr[0], &wa[0],
                            n, k, cap_free, S, H)
                if ns == 0:
                    # projected gradient: score components blocked by an
                    # active box face do not count against convergence
                    snorm = 0.0
                    for a in range(k):
                        sp = S[a]
                        if xi[a] >= box - box_eps and sp > 0.0:
                            sp = 0.0
                        elif xi[a] <= -box + box_eps and sp < 0.0:
                            sp = 0.0
                        snorm += sp * sp
                    snorm = sqrt(snorm)
                    if (prev_dll < ll_tol and prev_step < s_tol
                            and snorm <= g_tol and kkt / n <= g_tol):
                        converged = True
                        break
                # active-set reduction: coordinates pinned at a box face with
                # an outward score are frozen and the Newton system is solved
                # on the free coordinates (plus the hazard scale)
                nfree = 0
                for a in range(ke):
                    if a < k:
                        if xi[a] >= box - box_eps and S[a] > 0.0:
                            continue
                        if xi[a] <= -box + box_eps and S[a] < 0.0:
                            continue
                    freeidx[nfree] = a
                    nfree += 1
                if nfree == 0:
                    break
                ridge = 0.0
                trace_abs = 0.0
                for a in range(nfree):
                    trace_abs += H[freeidx[a] * ke + freeidx[a]]
                    Sr[a] = S[freeidx[a]]
                if trace_abs < 0.0:
                    trace_abs = -trace_abs
                ok = False
                while not ok:
                    for a in range(nfree):
                        for b in range(nfree):
                            A[a * nfree + b] = -H[freeidx[a] * ke + freeidx[b]]
                        A[a * nfree + a] += ridge
                    ok = _chol_small(A, L, nfree)
                    if not ok:
                        ridge = 2.0 * ridge if ridge > 0.0 else 1e-6 * (1.0 + trace_abs)
                        if ridge > 1e12:
                            break
                if not ok:
                    break
                _chol_solve_small(L, Sr, dr, nfree)
                for a in range(ke):
                    d[a] = 0.0
                for a in range(nfree):
                    d[freeidx[a]] = dr[a]
                t = 1.0
                accepted = False
                while t > 1e-13:
                    stepnorm = 0.0
                    for a in range(ke):
                        if a < k:
                            xi_try[a] = xi[a] + t * d[a]
                            if xi_try[a] > box:
                                xi_try[a] = box
                            elif xi_try[a] < -box:
                                xi_try[a] = -box
                            move = xi_try[a] - xi[a]
                        else:
                            xi_try[a] = t * d[a]
                            move = t * d[a]
                        stepnorm += move * move
                    _expr_xi(&Xa[0, 0], xi_try, &expr[0], n, k)
                    scale = exp(xi_try[k])
                    for i in range(m):
                        if lam[i] >= cap_free:
                            trial[i] = lam[i]
                        else:
                            trial[i] = scale * lam[i]
                            if trial[i] > dcap:
                                trial[i] = dcap
                    ll_new = _loglik(&trial[0], &kix[0], &da[0], &expr[0], &wa[0], n)
                    if ll_new >= ll - 1e-12 * (1.0 + (ll if ll >= 0 else -ll)):
                        for a in range(k):
                            xi[a] = xi_try[a]
                        for i in range(m):
                            lam[i] = trial[i]
                        ll = ll_new
                        accepted = True
                        stepnorm = sqrt(stepnorm)
                        if stepnorm > cycle_step:
                            cycle_step = stepnorm
                        break
                    t *= 0.5
                if not accepted:
                    _expr_xi(&Xa[0, 0], &xi[0], &expr[0], n, k)
                    break
                if stepnorm < 0.25 * s_tol:
                    break
            if converged:
                break
            # hazard update at the current regression parameters
            if any_event:
                ll = _icm_core(&lam[0], &kix[0], &da[0], &expr[0], &wa[0], n, m,
                               dcap, i_tol, i_max, ll,
                               &grad[0], &curv[0], &cfl[0], &target[0], &cand[0],
                               &trial[0], &level[0], &bweight[0], &bsize[0],
                               &pref[0], &scratch[0], &kkt, &icm_iters)
            else:
                for i in range(m):
                    lam[i] = 0.0
                kkt = 0.0
                ll = _loglik(&lam[0], &kix[0], &da[0], &expr[0], &wa[0], n)
            prev_dll = ll - ll_start if ll >= ll_start else ll_start - ll
            prev_step = cycle_step
            # bail out of flat-ridge drifts (quasi-separated weighted data):
            # the loglik has stopped moving but the parameters keep walking
            if prev_dll < ll_tol and prev_step >= s_tol:
                stall += 1
                if stall >= 150:
                    stalled = True
                    break
            else:
                stall = 0
            xi_abs = 0.0
            for a in range(k):
                if xi[a] > xi_abs:
                    xi_abs = xi[a]
                elif -xi[a] > xi_abs:
                    xi_abs = -xi[a]
            if xi_abs > 30.0:
                break
        _score_hess(&Xa[0, 0], &lam[0], &kix[0], &da[0], &expr[0], &wa[0], n, k, 0.0, S, H)
        snorm = 0.0
        for a in range(k):
            sp = S[a]
            if xi[a] >= box - box_eps and sp > 0.0:
                sp = 0.0
            elif xi[a] <= -box + box_eps and sp < 0.0:
                sp = 0.0
            snorm += sp * sp
        snorm = sqrt(snorm)
    cdef double grad_norm = snorm if snorm > kkt / n else kkt / n
    # a stalled exit (loglik flat, steps zigzagging along a ridge) still
    # counts as converged when the stationarity measures are met
    if stalled and prev_dll < ll_tol:
        converged = True
    return xi, lam, ll, cycle, bool(converged and grad_norm <= g_tol), grad_norm


def icm_fit(lam0, knot_idx, delta, expr, w, cap, tol, max_iter):
    """Modified iterative convex minorant ascent; see the Python twin for details.

    Returns ``(lam, loglik, iterations, kkt, converged)``.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=1] lam = np.array(lam0, dtype=np.float64, copy=True)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] kix = np.ascontiguousarray(knot_idx, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] da = np.ascontiguousarray(delta, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ea = np.ascontiguousarray(expr, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] wa = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t n = da.shape[0], m = lam.shape[0]
    cdef Py_ssize_t i, it = 0
    cdef double dcap = cap, dtol = tol
    cdef int miter = max_iter

    cdef bint any_event = False
    for i in range(n):
        if da[i] > 0.5:
            any_event = True
            break
    if not any_event:
        return np.zeros(m, dtype=np.float64), 0.0, 0, 0.0, True

    cdef cnp.ndarray[cnp.float64_t, ndim=1] grad = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] curv = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cfl = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] target = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cand = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] trial = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] level = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] bweight = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] bsize = np.empty(m, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] pref = np.empty(m + 1, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] scratch = np.empty(m + 1, dtype=np.float64)

    cdef double ll, ll_new, kkt, cmax, floor_val, gd, t
    cdef bint accepted

    ll = _loglik(&lam[0], &kix[0], &da[0], &ea[0], &wa[0], n)
    if ll == -INFINITY:
        raise ValueError("icm_fit: infeasible starting hazard (event at zero hazard)")

    with nogil:
        while it < miter:
            it += 1
            _grad_curv(&lam[0], &kix[0], &da[0], &ea[0], &wa[0], n, &grad[0], &curv[0], m)
            kkt = _kkt(&lam[0], &grad[0], dcap, &pref[0], &scratch[0], m)
            if kkt <= dtol:
                with gil:
                    return lam, ll, it, kkt, True
            cmax = 1.0
            for i in range(m):
                if curv[i] > cmax:
                    cmax = curv[i]
            floor_val = 1e-10 * cmax
            for i in range(m):
                cfl[i] = curv[i] if curv[i] > floor_val else floor_val
                target[i] = lam[i] + grad[i] / cfl[i]
            _pava_core(&target[0], &cfl[0], &cand[0], &level[0], &bweight[0], &bsize[0], m)
            gd = 0.0
            for i in range(m):
                if cand[i] < 0.0:
                    cand[i] = 0.0
                elif cand[i] > dcap:
                    cand[i] = dcap
                cand[i] -= lam[i]  # cand now holds the direction
                gd += grad[i] * cand[i]
            if gd <= 0.0:
                break
            t = 1.0
            accepted = False
            while t > 1e-13:
                for i in range(m):
                    trial[i] = lam[i] + t * cand[i]
                ll_new = _loglik(&trial[0], &kix[0], &da[0], &ea[0], &wa[0], n)
                if ll_new >= ll + 1e-4 * t * gd:
                    for i in range(m):
                        lam[i] = trial[i]
                    ll = ll_new
                    accepted = True
                    break
                t *= 0.5
            if not accepted:
                break
        _grad_curv(&lam[0], &kix[0], &da[0], &ea[0], &wa[0], n, &grad[0], &curv[0], m)
        kkt = _kkt(&lam[0], &grad[0], dcap, &pref[0], &scratch[0], m)
    return lam, ll, it, kkt, kkt <= dtol
