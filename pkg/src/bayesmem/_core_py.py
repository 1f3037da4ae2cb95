"""NumPy reference kernels for per-dimension GMM/KDE fitting and scoring.

These mirror the compiled kernels in `_core_c.pyx`; one of the two is picked
at import time by `bayesmem.backend`.  Everything here is deterministic:
no global RNG, fixed reduction shapes, fixed chunk sizes.
"""

from __future__ import annotations

import math

import numpy as np

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

# Guard for the (astronomically far) tail where -0.5*z*z overflows to -inf;
# keeps the log-density a total, finite function of finite inputs.
MIN_LOG_PDF = -1.0e300

# Rows per block in batch scoring; fixed so results never depend on callers.
_SCORE_BLOCK = 256


def population_std(x: np.ndarray) -> float:
    """Two-pass population standard deviation (ddof=0) of a 1-D array."""
    m = x.mean()
    return float(np.sqrt(np.mean((x - m) ** 2)))


def _quantiles_sorted(xs: np.ndarray, qs: np.ndarray) -> np.ndarray:
    """Linear-interpolated quantiles of pre-sorted rows.

    xs: (D, N) sorted along axis 1; qs: (S,) in [0, 1].  Returns (D, S).
    Matches the classic `lo + frac * (hi - lo)` rule so the compiled kernel
    can reproduce it exactly.
    """
    n = xs.shape[1]
    pos = qs * (n - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n - 1)
    frac = pos - lo
    return xs[:, lo] + frac * (xs[:, hi] - xs[:, lo])


def _mstep(counts, sums, sumsqs, sigma_floor):
    """Parameters from responsibility-weighted sufficient statistics.

    Dead components (zero count) get NaN-free placeholders; the rescue step
    in the EM loop deals with them before they can matter.
    """
    total = counts.sum(axis=1, keepdims=True)
    weights = counts / total
    safe = np.maximum(counts, 1e-300)
    mus = sums / safe
    var = sumsqs / safe - mus * mus
    sigmas = np.sqrt(np.maximum(var, 0.0))
    np.maximum(sigmas, sigma_floor, out=sigmas)
    return weights, mus, sigmas


def _estep(x, weights, mus, sigmas):
    """One E pass: per-sample log-likelihood and responsibility stats.

    x: (A, N); params: (A, S).  Returns (ll (A,), counts, sums, sumsqs (A, S),
    ll_n (A, N)).
    """
    z = (x[:, :, None] - mus[:, None, :]) / sigmas[:, None, :]
    with np.errstate(divide="ignore"):
        logw = np.where(weights > 0.0, np.log(np.maximum(weights, 1e-300)), -np.inf)
    lw = -0.5 * z * z - np.log(sigmas)[:, None, :] - HALF_LOG_2PI + logw[:, None, :]
    m = lw.max(axis=2, keepdims=True)
    r = np.exp(lw - m)
    ssum = r.sum(axis=2, keepdims=True)
    ll_n = m[:, :, 0] + np.log(ssum[:, :, 0])
    ll = ll_n.sum(axis=1)
    r /= ssum
    counts = r.sum(axis=1)
    sums = (r * x[:, :, None]).sum(axis=1)
    sumsqs = (r * (x * x)[:, :, None]).sum(axis=1)
    return ll, counts, sums, sumsqs, ll_n


def gmm_fit_batch(
    xt: np.ndarray,
    n_components: int,
    max_iter: int,
    tol: float,
    sigma_floor: float,
    rescue_frac: float = 1e-8,
    track_loglik: bool = False,
    init=None,
):
    """Fit one 1-D GMM per row of xt by EM.

    xt: (D, N) float64, each row an independent sample set (same N).
    Initialization is deterministic: component s starts at the
    (s + 0.5) / S quantile, sigma at the population std (floored), weights
    uniform.  Iterates until the row's log-likelihood improves by less than
    `tol` or `max_iter` passes.  Returned parameters are always the M-step
    image of the returned sufficient statistics, so (weights, mus, sigmas)
    and (counts, sums, sumsqs) stay mutually consistent.

    A component whose responsibility mass collapses below rescue_frac * N
    is re-seeded on the worst-explained sample with weight 1/N; that is a
    restart, not an EM step, so the convergence baseline resets after it
    and the log-likelihood trace may drop exactly there.

    Returns dict with weights/mus/sigmas/counts/sums/sumsqs (D, S),
    n_iter (D,), and, when tracked, loglik_traces plus rescue_iters (per-row
    iteration indices where a rescue fired).
    """
    xt = np.ascontiguousarray(xt, dtype=np.float64)
    d, n = xt.shape
    s = int(n_components)

    pop_std = np.sqrt(np.mean((xt - xt.mean(axis=1, keepdims=True)) ** 2, axis=1))

    if init is None:
        qs = (np.arange(s) + 0.5) / s
        mus = _quantiles_sorted(np.sort(xt, axis=1), qs)
        sigmas = np.repeat(np.maximum(pop_std, sigma_floor)[:, None], s, axis=1)
        weights = np.full((d, s), 1.0 / s)
    else:
        w0, m0, s0 = init
        weights = np.tile(np.asarray(w0, dtype=np.float64), (d, 1))
        mus = np.tile(np.asarray(m0, dtype=np.float64), (d, 1))
        sigmas = np.tile(np.asarray(s0, dtype=np.float64), (d, 1))

    counts = np.zeros((d, s))
    sums = np.zeros((d, s))
    sumsqs = np.zeros((d, s))
    n_iter = np.zeros(d, dtype=np.int64)
    last_ll = np.full(d, -np.inf)
    just_rescued = np.zeros(d, dtype=bool)
    traces = [[] for _ in range(d)] if track_loglik else None
    rescue_iters = [[] for _ in range(d)] if track_loglik else None

    active = np.arange(d)
    for it in range(max_iter):
        x = xt[active]
        ll, c, sm, sq, ll_n = _estep(x, weights[active], mus[active], sigmas[active])
        counts[active] = c
        sums[active] = sm
        sumsqs[active] = sq
        n_iter[active] = it + 1
        if track_loglik:
            for j, dim in enumerate(active):
                traces[dim].append(ll[j])
        # A rescue is a discontinuous restart: never declare convergence by
        # comparing log-likelihoods across it.
        if it > 0:
            done = ((ll - last_ll[active]) < tol) & ~just_rescued[active]
        else:
            done = np.zeros(len(active), bool)
        last_ll[active] = ll
        just_rescued[active] = False

        w_new, mu_new, sg_new = _mstep(c, sm, sq, sigma_floor)
        weights[active] = w_new
        mus[active] = mu_new
        sigmas[active] = sg_new

        # Revive components whose responsibility mass collapsed: park them on
        # the sample the current mixture explains worst.
        dead_rows = np.where((c < rescue_frac * n).any(axis=1) & ~done)[0]
        for j in dead_rows:
            dim = active[j]
            _, _, _, _, ll_row = _estep(
                xt[dim : dim + 1], weights[dim : dim + 1], mus[dim : dim + 1], sigmas[dim : dim + 1]
            )
            worst = int(np.argmin(ll_row[0]))
            for comp in np.where(c[j] < rescue_frac * n)[0]:
                mus[dim, comp] = xt[dim, worst]
                sigmas[dim, comp] = max(pop_std[dim], sigma_floor)
                weights[dim, comp] = 1.0 / n
            weights[dim] /= weights[dim].sum()
            just_rescued[dim] = True
            if track_loglik:
                rescue_iters[dim].append(it)

        active = active[~done]
        if active.size == 0:
            break

    # Canonical component order: ascending mean (sigma, weight as tie keys).
    order = np.lexsort((weights, sigmas, mus), axis=1)
    rows = np.arange(d)[:, None]
    out = {
        "weights": weights[rows, order],
        "mus": mus[rows, order],
        "sigmas": sigmas[rows, order],
        "counts": counts[rows, order],
        "sums": sums[rows, order],
        "sumsqs": sumsqs[rows, order],
        "n_iter": n_iter,
    }
    if track_loglik:
        out["loglik_traces"] = [np.asarray(t) for t in traces]
        out["rescue_iters"] = [np.asarray(r, dtype=np.int64) for r in rescue_iters]
    return out


def gmm_feature_log_pdf(x_block, weights, mus, sigmas):
    """Per-feature mixture log-density block.

    x_block: (n, K); params: (K, S).  Returns (n, K).
    """
    z = (x_block[:, :, None] - mus[None, :, :]) / sigmas[None, :, :]
    with np.errstate(divide="ignore"):
        logw = np.where(weights > 0.0, np.log(np.maximum(weights, 1e-300)), -np.inf)
    lw = -0.5 * z * z - np.log(sigmas)[None, :, :] - HALF_LOG_2PI + logw[None, :, :]
    m = lw.max(axis=2)
    lpdf = m + np.log(np.exp(lw - m[:, :, None]).sum(axis=2))
    return np.maximum(lpdf, MIN_LOG_PDF)


def gmm_score_batch(x, weights, mus, sigmas, clamp):
    """Naive-Bayes log-likelihood of each row of x under one class's GMMs.

    x: (N, K); params: (K, S).  Per-feature log-densities below `clamp` are
    lifted to it (pass -inf to disable).  Returns (scores (N,),
    clamped (N,) int64 counts of clamped features).
    """
    n = x.shape[0]
    scores = np.empty(n)
    clamped = np.zeros(n, dtype=np.int64)
    for start in range(0, n, _SCORE_BLOCK):
        stop = min(start + _SCORE_BLOCK, n)
        lpdf = gmm_feature_log_pdf(x[start:stop], weights, mus, sigmas)
        below = lpdf < clamp
        clamped[start:stop] = below.sum(axis=1)
        np.maximum(lpdf, clamp, out=lpdf)
        scores[start:stop] = lpdf.sum(axis=1)
    return scores, clamped


def gmm_resp_stats(x, weights, mus, sigmas):
    """E-step sufficient statistics of a batch under fixed per-dim GMMs.

    x: (N, K); params: (K, S).  Returns counts, sums, sumsqs (K, S).
    """
    z = (x[:, :, None] - mus[None, :, :]) / sigmas[None, :, :]
    with np.errstate(divide="ignore"):
        logw = np.where(weights > 0.0, np.log(np.maximum(weights, 1e-300)), -np.inf)
    lw = -0.5 * z * z - np.log(sigmas)[None, :, :] - HALF_LOG_2PI + logw[None, :, :]
    m = lw.max(axis=2, keepdims=True)
    r = np.exp(lw - m)
    r /= r.sum(axis=2, keepdims=True)
    counts = r.sum(axis=0)
    sums = (r * x[:, :, None]).sum(axis=0)
    sumsqs = (r * (x * x)[:, :, None]).sum(axis=0)
    return counts, sums, sumsqs


def kde_feature_log_pdf(x_block, centers, bandwidths):
    """Per-feature Gaussian-KDE log-density block.

    x_block: (n, K); centers: (C, K); bandwidths: (K,).  Returns (n, K).
    """
    c = centers.shape[0]
    z = (x_block[:, None, :] - centers[None, :, :]) / bandwidths[None, None, :]
    q = -0.5 * z * z
    m = q.max(axis=1)
    lse = m + np.log(np.exp(q - m[:, None, :]).sum(axis=1))
    lpdf = lse - np.log(bandwidths)[None, :] - HALF_LOG_2PI - math.log(c)
    return np.maximum(lpdf, MIN_LOG_PDF)


def kde_score_batch(x, centers, bandwidths, clamp):
    """Naive-Bayes log-likelihood of each row of x under one class's KDEs.

    Same contract as gmm_score_batch.
    """
    n, k = x.shape
    n_centers = max(centers.shape[0], 1)
    # Fixed memory budget per block (~8M doubles), never thread-dependent.
    block = max(1, min(_SCORE_BLOCK, 8_000_000 // (n_centers * max(k, 1))))
    scores = np.empty(n)
    clamped = np.zeros(n, dtype=np.int64)
    for start in range(0, n, block):
        stop = min(start + block, n)
        lpdf = kde_feature_log_pdf(x[start:stop], centers, bandwidths)
        below = lpdf < clamp
        clamped[start:stop] = below.sum(axis=1)
        np.maximum(lpdf, clamp, out=lpdf)
        scores[start:stop] = lpdf.sum(axis=1)
    return scores, clamped
