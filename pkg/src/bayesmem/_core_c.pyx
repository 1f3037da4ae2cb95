# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels for per-dimension GMM/KDE fitting and scoring.

Algorithmically identical to `bayesmem._core_py`; fused loops avoid the
(N, K, S) temporaries of the NumPy path and release the GIL so chunked
calls can run on real threads.  Results agree with the fallback to float
rounding (summation order differs), never in structure.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, sqrt, INFINITY
from libc.stdlib cimport qsort

cnp.import_array()

cdef double HALF_LOG_2PI = 0.9189385332046727417803297364056176
cdef double MIN_LOG_PDF = -1.0e300


cdef int _cmp_double(const void* a, const void* b) noexcept nogil:
    cdef double da = (<const double*> a)[0]
    cdef double db = (<const double*> b)[0]
    if da < db:
        return -1
    if da > db:
        return 1
    return 0


cdef double _pop_std(const double[::1] x) noexcept nogil:
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double m = 0.0, v = 0.0, d
    for i in range(n):
        m += x[i]
    m /= n
    for i in range(n):
        d = x[i] - m
        v += d * d
    return sqrt(v / n)


cdef double _stream_lse(const double* t, Py_ssize_t s) noexcept nogil:
    # One-pass log-sum-exp; skips -inf terms (zero-weight components).
    cdef double m = -INFINITY, acc = 0.0
    cdef Py_ssize_t i
    for i in range(s):
        if t[i] == -INFINITY:
            continue
        if t[i] <= m:
            acc += exp(t[i] - m)
        else:
            if m == -INFINITY:
                acc = 1.0
            else:
                acc = acc * exp(m - t[i]) + 1.0
            m = t[i]
    if m == -INFINITY:
        return -INFINITY
    return m + log(acc)


cdef double _row_loglik(const double[::1] x, const double[::1] w, const double[::1] mu,
                        const double[::1] sg, double* scratch, Py_ssize_t s,
                        double* ll_n_out) noexcept nogil:
    # Total log-likelihood of one sample row; per-sample values optional.
    cdef Py_ssize_t i, j, n = x.shape[0]
    cdef double z, ll = 0.0, v
    for i in range(n):
        for j in range(s):
            if w[j] > 0.0:
                z = (x[i] - mu[j]) / sg[j]
                scratch[j] = -0.5 * z * z - log(sg[j]) - HALF_LOG_2PI + log(w[j])
            else:
                scratch[j] = -INFINITY
        v = _stream_lse(scratch, s)
        if ll_n_out != NULL:
            ll_n_out[i] = v
        ll += v
    return ll


cdef void _mstep_row(double[::1] c, double[::1] sm, double[::1] sq,
                     double[::1] w, double[::1] mu, double[::1] sg,
                     double sigma_floor, Py_ssize_t s) noexcept nogil:
    cdef Py_ssize_t j
    cdef double total = 0.0, safe, var
    for j in range(s):
        total += c[j]
    for j in range(s):
        w[j] = c[j] / total
        safe = c[j] if c[j] > 1e-300 else 1e-300
        mu[j] = sm[j] / safe
        var = sq[j] / safe - mu[j] * mu[j]
        if var < 0.0:
            var = 0.0
        sg[j] = sqrt(var)
        if sg[j] < sigma_floor:
            sg[j] = sigma_floor


cdef Py_ssize_t _fit_row(const double[::1] x, double[::1] sortbuf, Py_ssize_t s,
                         int max_iter, double tol, double sigma_floor, double rescue_frac,
                         double[::1] w, double[::1] mu, double[::1] sg,
                         double[::1] c, double[::1] sm, double[::1] sq,
                         double* scratch, double* ll_n, double* trace,
                         long long* rescue_buf, bint has_init) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i, j, it, worst
    cdef double pos, frac, pstd, z, lw, m_max, ssum, ll, last_ll, t, wsum, best
    cdef bint done, any_dead, just_rescued

    pstd = _pop_std(x)

    if not has_init:
        for i in range(n):
            sortbuf[i] = x[i]
        qsort(&sortbuf[0], n, sizeof(double), _cmp_double)
        for j in range(s):
            pos = ((j + 0.5) / s) * (n - 1)
            i = <Py_ssize_t> pos
            frac = pos - i
            if i + 1 <= n - 1:
                mu[j] = sortbuf[i] + frac * (sortbuf[i + 1] - sortbuf[i])
            else:
                mu[j] = sortbuf[i]
            sg[j] = pstd if pstd > sigma_floor else sigma_floor
            w[j] = 1.0 / s

    if rescue_buf != NULL:
        rescue_buf[0] = 0
    last_ll = -INFINITY
    just_rescued = False
    for it in range(max_iter):
        # E-step: per-sample responsibilities, accumulated into stats.
        for j in range(s):
            c[j] = 0.0
            sm[j] = 0.0
            sq[j] = 0.0
        ll = 0.0
        for i in range(n):
            for j in range(s):
                if w[j] > 0.0:
                    z = (x[i] - mu[j]) / sg[j]
                    scratch[j] = -0.5 * z * z - log(sg[j]) - HALF_LOG_2PI + log(w[j])
                else:
                    scratch[j] = -INFINITY
            m_max = _stream_lse(scratch, s)
            ll_n[i] = m_max
            ll += m_max
            for j in range(s):
                if scratch[j] == -INFINITY:
                    continue
                t = exp(scratch[j] - m_max)
                c[j] += t
                sm[j] += t * x[i]
                sq[j] += t * x[i] * x[i]
        if trace != NULL:
            trace[it] = ll
        # A rescue is a discontinuous restart: never declare convergence by
        # comparing log-likelihoods across it.
        done = it > 0 and not just_rescued and (ll - last_ll) < tol
        last_ll = ll
        just_rescued = False

        _mstep_row(c, sm, sq, w, mu, sg, sigma_floor, s)

        if not done:
            any_dead = False
            for j in range(s):
                if c[j] < rescue_frac * n:
                    any_dead = True
                    break
            if any_dead:
                _row_loglik(x, w, mu, sg, scratch, s, ll_n)
                worst = 0
                best = ll_n[0]
                for i in range(1, n):
                    if ll_n[i] < best:
                        best = ll_n[i]
                        worst = i
                for j in range(s):
                    if c[j] < rescue_frac * n:
                        mu[j] = x[worst]
                        sg[j] = pstd if pstd > sigma_floor else sigma_floor
                        w[j] = 1.0 / n
                wsum = 0.0
                for j in range(s):
                    wsum += w[j]
                for j in range(s):
                    w[j] /= wsum
                just_rescued = True
                if rescue_buf != NULL:
                    rescue_buf[0] += 1
                    rescue_buf[rescue_buf[0]] = it
        if done:
            return it + 1
    return max_iter


cdef void _sort_components(double[::1] w, double[::1] mu, double[::1] sg,
                           double[::1] c, double[::1] sm, double[::1] sq,
                           Py_ssize_t s) noexcept nogil:
    # Insertion sort by (mu, sigma, weight); S is tiny.
    cdef Py_ssize_t i, j
    cdef double kw, kmu, ksg, kc, ksm, ksq
    for i in range(1, s):
        kw = w[i]; kmu = mu[i]; ksg = sg[i]; kc = c[i]; ksm = sm[i]; ksq = sq[i]
        j = i - 1
        while j >= 0 and (mu[j] > kmu or (mu[j] == kmu and (sg[j] > ksg or
                          (sg[j] == ksg and w[j] > kw)))):
            w[j + 1] = w[j]; mu[j + 1] = mu[j]; sg[j + 1] = sg[j]
            c[j + 1] = c[j]; sm[j + 1] = sm[j]; sq[j + 1] = sq[j]
            j -= 1
        w[j + 1] = kw; mu[j + 1] = kmu; sg[j + 1] = ksg
        c[j + 1] = kc; sm[j + 1] = ksm; sq[j + 1] = ksq


def gmm_fit_batch(xt, n_components, max_iter, tol, sigma_floor,
                  rescue_frac=1e-8, track_loglik=False, init=None):
    """Fit one 1-D GMM per row of xt by EM; see the NumPy twin for contract."""
    cdef double[:, ::1] X = np.ascontiguousarray(xt, dtype=np.float64)
    cdef Py_ssize_t d = X.shape[0], n = X.shape[1], s = int(n_components)
    cdef int mi = int(max_iter)
    cdef double ctol = float(tol), floor_ = float(sigma_floor), rf = float(rescue_frac)
    cdef bint track = bool(track_loglik)

    weights = np.zeros((d, s))
    mus = np.zeros((d, s))
    sigmas = np.zeros((d, s))
    counts = np.zeros((d, s))
    sums = np.zeros((d, s))
    sumsqs = np.zeros((d, s))
    n_iter = np.zeros(d, dtype=np.int64)

    cdef double[:, ::1] W = weights, MU = mus, SG = sigmas
    cdef double[:, ::1] C = counts, SM = sums, SQ = sumsqs
    cdef long long[::1] NI = n_iter

    cdef bint has_init = init is not None
    if has_init:
        w0, m0, s0 = init
        weights[:] = np.asarray(w0, dtype=np.float64)[None, :]
        mus[:] = np.asarray(m0, dtype=np.float64)[None, :]
        sigmas[:] = np.asarray(s0, dtype=np.float64)[None, :]

    sortbuf = np.empty(n)
    scratch = np.empty(s)
    ll_n = np.empty(n)
    trace_buf = np.empty(mi) if track else None
    rescue_arr = np.zeros(mi + 1, dtype=np.int64) if track else None
    cdef double[::1] SB = sortbuf, SC = scratch, LN = ll_n
    cdef double[::1] TB = trace_buf if track else scratch  # placeholder view
    cdef long long[::1] RB = rescue_arr if track else n_iter  # placeholder view
    cdef double* trace_ptr
    cdef long long* rescue_ptr
    cdef Py_ssize_t row, used

    traces = [] if track else None
    rescues = [] if track else None
    trace_ptr = &TB[0] if track else NULL
    rescue_ptr = &RB[0] if track else NULL

    for row in range(d):
        with nogil:
            used = _fit_row(X[row], SB, s, mi, ctol, floor_, rf,
                            W[row], MU[row], SG[row], C[row], SM[row], SQ[row],
                            &SC[0], &LN[0], trace_ptr, rescue_ptr, has_init)
            NI[row] = used
            _sort_components(W[row], MU[row], SG[row], C[row], SM[row], SQ[row], s)
        if track:
            traces.append(np.array(trace_buf[:used]))
            rescues.append(np.array(rescue_arr[1 : 1 + rescue_arr[0]]))

    out = {"weights": weights, "mus": mus, "sigmas": sigmas,
           "counts": counts, "sums": sums, "sumsqs": sumsqs, "n_iter": n_iter}
    if track:
        out["loglik_traces"] = traces
        out["rescue_iters"] = rescues
    return out


def gmm_score_batch(x, weights, mus, sigmas, clamp):
    """Summed per-feature mixture log-density per row; see NumPy twin."""
    cdef double[:, ::1] X = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] W = np.ascontiguousarray(weights, dtype=np.float64)
    cdef double[:, ::1] MU = np.ascontiguousarray(mus, dtype=np.float64)
    cdef double[:, ::1] SG = np.ascontiguousarray(sigmas, dtype=np.float64)
    cdef double cl = float(clamp)
    cdef Py_ssize_t n = X.shape[0], k = X.shape[1], s = W.shape[1]

    scores = np.zeros(n)
    clamped = np.zeros(n, dtype=np.int64)
    cdef double[::1] OUT = scores
    cdef long long[::1] NCL = clamped
    scratch = np.empty(s)
    cdef double[::1] SC = scratch
    cdef Py_ssize_t i, j, q
    cdef double z, v, acc
    cdef long long ncl

    with nogil:
        for i in range(n):
            acc = 0.0
            ncl = 0
            for j in range(k):
                for q in range(s):
                    if W[j, q] > 0.0:
                        z = (X[i, j] - MU[j, q]) / SG[j, q]
                        SC[q] = -0.5 * z * z - log(SG[j, q]) - HALF_LOG_2PI + log(W[j, q])
                    else:
                        SC[q] = -INFINITY
                v = _stream_lse(&SC[0], s)
                if v < MIN_LOG_PDF:
                    v = MIN_LOG_PDF
                if v < cl:
                    v = cl
                    ncl += 1
                acc += v
            OUT[i] = acc
            NCL[i] = ncl
    return scores, clamped


def gmm_resp_stats(x, weights, mus, sigmas):
    """E-step sufficient statistics of a batch under fixed per-dim GMMs."""
    cdef double[:, ::1] X = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] W = np.ascontiguousarray(weights, dtype=np.float64)
    cdef double[:, ::1] MU = np.ascontiguousarray(mus, dtype=np.float64)
    cdef double[:, ::1] SG = np.ascontiguousarray(sigmas, dtype=np.float64)
    cdef Py_ssize_t n = X.shape[0], k = X.shape[1], s = W.shape[1]

    counts = np.zeros((k, s))
    sums = np.zeros((k, s))
    sumsqs = np.zeros((k, s))
    cdef double[:, ::1] C = counts, SM = sums, SQ = sumsqs
    scratch = np.empty(s)
    cdef double[::1] SC = scratch
    cdef Py_ssize_t i, j, q
    cdef double z, m, t

    with nogil:
        for i in range(n):
            for j in range(k):
                for q in range(s):
                    if W[j, q] > 0.0:
                        z = (X[i, j] - MU[j, q]) / SG[j, q]
                        SC[q] = -0.5 * z * z - log(SG[j, q]) - HALF_LOG_2PI + log(W[j, q])
                    else:
                        SC[q] = -INFINITY
                m = _stream_lse(&SC[0], s)
                for q in range(s):
                    if SC[q] == -INFINITY:
                        continue
                    t = exp(SC[q] - m)
                    C[j, q] += t
                    SM[j, q] += t * X[i, j]
                    SQ[j, q] += t * X[i, j] * X[i, j]
    return counts, sums, sumsqs


def kde_score_batch(x, centers, bandwidths, clamp):
    """Summed per-feature Gaussian-KDE log-density per row; see NumPy twin."""
    cdef double[:, ::1] X = np.ascontiguousarray(x, dtype=np.float64)
    # (K, C) layout so the inner loop over centers is contiguous.
    cdef double[:, ::1] CT = np.ascontiguousarray(np.asarray(centers, dtype=np.float64).T)
    cdef double[::1] H = np.ascontiguousarray(bandwidths, dtype=np.float64)
    cdef double cl = float(clamp)
    cdef Py_ssize_t n = X.shape[0], k = X.shape[1], c = CT.shape[1]

    scores = np.zeros(n)
    clamped = np.zeros(n, dtype=np.int64)
    cdef double[::1] OUT = scores
    cdef long long[::1] NCL = clamped
    cdef Py_ssize_t i, j, q
    cdef double z, t, m, acc_exp, v, acc, logc = log(<double> c)
    cdef long long ncl

    with nogil:
        for i in range(n):
            acc = 0.0
            ncl = 0
            for j in range(k):
                m = -INFINITY
                acc_exp = 0.0
                for q in range(c):
                    z = (X[i, j] - CT[j, q]) / H[j]
                    t = -0.5 * z * z
                    if t <= m:
                        acc_exp += exp(t - m)
                    else:
                        if m == -INFINITY:
                            acc_exp = 1.0
                        else:
                            acc_exp = acc_exp * exp(m - t) + 1.0
                        m = t
                v = m + log(acc_exp) - log(H[j]) - HALF_LOG_2PI - logc
                if v < MIN_LOG_PDF:
                    v = MIN_LOG_PDF
                if v < cl:
                    v = cl
                    ncl += 1
                acc += v
            OUT[i] = acc
            NCL[i] = ncl
    return scores, clamped
