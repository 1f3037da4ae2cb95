"""Shared test helpers: independent oracles and tiny bank builders.

The oracle evaluator here is deliberately written in plain Python math
(explicit products, explicit Bayes denominator) and never calls the
library's scoring paths; acceptance tests compare the two.
"""

import math

import numpy as np
import pytest

from bayesmem.memory import ClassMemory, EstimatorConfig, MemoryBank

LOG_STD_NORMAL_PEAK = -0.9189385332046727  # log(1/sqrt(2*pi))


def gauss_pdf(x, mu, sigma):
    return math.exp(-0.5 * ((x - mu) / sigma) ** 2) / (math.sqrt(2.0 * math.pi) * sigma)


def oracle_posteriors(bank, z, uniform_prior=False):
    """Direct Bayes-rule evaluation with the explicit denominator.

    Computes p(c|z) = p(z|c)p(c) / sum_m p(z|m)p(m) with raw probability
    products (no logs, no clamps) from the bank's stored parameters.
    Returns (class_ids, posteriors, predicted_id); ties go to the smallest
    class id via strict-greater replacement.
    """
    ids = sorted(bank.classes)
    total = sum(bank.classes[c].count for c in ids)
    joint = []
    for cid in ids:
        cm = bank.classes[cid]
        like = 1.0
        for k in range(cm.K):
            if cm.kind == "gmm":
                p = 0.0
                for s in range(cm.n_components):
                    p += cm.weights[k, s] * gauss_pdf(z[k], cm.mus[k, s], cm.sigmas[k, s])
            else:
                p = 0.0
                for i in range(cm.centers.shape[0]):
                    p += gauss_pdf(z[k], cm.centers[i, k], cm.bandwidths[k])
                p /= cm.centers.shape[0]
            like *= p
        prior = 1.0 / len(ids) if uniform_prior else cm.count / total
        joint.append(like * prior)
    denom = sum(joint)
    post = [j / denom for j in joint]
    best = 0
    for i in range(1, len(post)):
        if post[i] > post[best]:
            best = i
    return ids, post, ids[best]


def gmm_class_memory(class_id, count, weights, mus, sigmas):
    """ClassMemory from explicit (K, S) parameter arrays.

    Sufficient statistics are synthesized to be consistent with the
    parameters (counts = w*N, sums = counts*mu, sumsqs = counts*(mu^2+s^2)),
    so the module invariants hold.
    """
    weights = np.asarray(weights, dtype=np.float64)
    mus = np.asarray(mus, dtype=np.float64)
    sigmas = np.asarray(sigmas, dtype=np.float64)
    counts = weights * count
    sums = counts * mus
    sumsqs = counts * (mus * mus + sigmas * sigmas)
    return ClassMemory(
        class_id=class_id, count=count, kind="gmm",
        weights=weights, mus=mus, sigmas=sigmas,
        suff_counts=counts, suff_sums=sums, suff_sumsqs=sumsqs,
    )


def gmm_bank(class_params):
    """Bank from {class_id: (count, weights, mus, sigmas)} with (K, S) arrays."""
    first = next(iter(class_params.values()))
    k = np.asarray(first[1]).shape[0]
    s = np.asarray(first[1]).shape[1]
    bank = MemoryBank(K=k, estimator=EstimatorConfig(kind="gmm", components=s))
    for cid, (count, w, mu, sg) in class_params.items():
        bank.classes[cid] = gmm_class_memory(cid, count, w, mu, sg)
    return bank


def trapezoid(y, x):
    """Plain trapezoid quadrature; independent of numpy's implementation."""
    y = np.asarray(y)
    x = np.asarray(x)
    return float(np.sum((y[1:] + y[:-1]) * 0.5 * (x[1:] - x[:-1])))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
