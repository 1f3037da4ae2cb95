"""Bayes-rule prediction over a memory bank.

The decision score for class c at feature vector z is the factorized
log-joint  sum_k log p(f_k = z_k | c) + log p(c); the shared evidence term
is constant across classes and dropped.  Full posteriors reinstate it via
log-sum-exp on demand.  A nearest-class-mean baseline is included for
harness sanity checks only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from bayesmem import backend
from bayesmem.memory import ClassMemory, MemoryBank
from bayesmem.utils import ValidationError, run_chunked

# Per-feature log-density floor: keeps K-term sums far from f64 limits even
# with floored-variance models evaluated deep in their tails.  Clamped
# features are counted and surfaced as a diagnostic flag.
CLAMP_LOG_PDF = -745.0


@dataclass
class ClassScores:
    """Scores of one feature vector against every learned class."""

    class_ids: np.ndarray  # (M,) ascending
    log_joint: np.ndarray  # (M,) log p(z|c) + log p(c), evidence term dropped
    predicted: int
    posterior: Optional[np.ndarray] = None  # (M,) softmax of log_joint, on demand
    clamped: bool = False  # any per-feature log-density hit the clamp


@dataclass
class BatchScores:
    """predict() over many vectors at once; row i scores Z[i]."""

    class_ids: np.ndarray  # (M,)
    log_joint: np.ndarray  # (N, M)
    predicted: np.ndarray  # (N,)
    clamped: np.ndarray  # (N,) bool


def _check_bank(bank: MemoryBank):
    if not bank.classes:
        raise ValidationError("no classes learned")


def _check_vector(bank: MemoryBank, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] != bank.K:
        raise ValidationError(f"feature vector must have length {bank.K}, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValidationError("feature vector contains non-finite values")
    return z


def _score_class(cm: ClassMemory, x: np.ndarray):
    if cm.kind == "gmm":
        return backend.gmm_score_batch(x, cm.weights, cm.mus, cm.sigmas, CLAMP_LOG_PDF)
    return backend.kde_score_batch(x, cm.centers, cm.bandwidths, CLAMP_LOG_PDF)


def class_log_likelihood(bank: MemoryBank, class_id: int, z) -> float:
    """sum_k log p(f_k = z_k | c): the factorized log-likelihood of one class."""
    _check_bank(bank)
    if class_id not in bank.classes:
        raise ValidationError(f"class {class_id} not in bank")
    z = _check_vector(bank, z)
    scores, _ = _score_class(bank.classes[class_id], z[None, :])
    return float(scores[0])


def log_prior(bank: MemoryBank, class_id: int) -> float:
    """log(N_c / total): prior from stored training counts."""
    _check_bank(bank)
    if class_id not in bank.classes:
        raise ValidationError(f"class {class_id} not in bank")
    return float(np.log(bank.classes[class_id].count) - np.log(bank.total_count))


def predict_batch(
    bank: MemoryBank,
    Z,
    uniform_prior: bool = False,
    threads: int = 1,
) -> BatchScores:
    """Score every row of Z against every class; argmax with smallest-id ties.

    Read-only on the bank; safe to run concurrently with other predictions.
    """
    _check_bank(bank)
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != bank.K:
        raise ValidationError(f"feature matrix must be (N, {bank.K}), got {Z.shape}")
    if not np.all(np.isfinite(Z)):
        raise ValidationError("feature matrix contains non-finite values")
    ids = np.array(bank.class_ids(), dtype=np.int64)
    m = ids.size
    n = Z.shape[0]
    log_joint = np.empty((n, m))
    clamp_counts = np.empty((n, m), dtype=np.int64)
    total = bank.total_count

    def score_range(start, stop):
        for j in range(start, stop):
            cm = bank.classes[int(ids[j])]
            scores, clamped = _score_class(cm, Z)
            prior = 0.0 if uniform_prior else float(np.log(cm.count) - np.log(total))
            log_joint[:, j] = scores + prior
            clamp_counts[:, j] = clamped

    run_chunked(score_range, m, 1, threads)
    predicted = ids[np.argmax(log_joint, axis=1)]
    return BatchScores(
        class_ids=ids,
        log_joint=log_joint,
        predicted=predicted,
        clamped=clamp_counts.sum(axis=1) > 0,
    )


def predict(bank: MemoryBank, z, uniform_prior: bool = False) -> ClassScores:
    """Highest log-joint class for one vector; the evidence term is never computed."""
    z = _check_vector(bank, z)
    batch = predict_batch(bank, z[None, :], uniform_prior=uniform_prior)
    return ClassScores(
        class_ids=batch.class_ids,
        log_joint=batch.log_joint[0],
        predicted=int(batch.predicted[0]),
        clamped=bool(batch.clamped[0]),
    )


def softmax_rows(log_joint: np.ndarray) -> np.ndarray:
    m = log_joint.max(axis=-1, keepdims=True)
    p = np.exp(log_joint - m)
    return p / p.sum(axis=-1, keepdims=True)


def posterior(bank: MemoryBank, z, uniform_prior: bool = False) -> ClassScores:
    """predict() plus the normalized posterior (evidence reinstated by softmax)."""
    scores = predict(bank, z, uniform_prior=uniform_prior)
    scores.posterior = softmax_rows(scores.log_joint)
    return scores


def class_means(bank: MemoryBank):
    """Per-class feature-space means implied by the stored densities.

    GMM: mixture mean sum_s w_s * mu_s per dimension.  KDE: center mean.
    Returns (ids (M,), means (M, K)).
    """
    _check_bank(bank)
    ids = np.array(bank.class_ids(), dtype=np.int64)
    means = np.empty((ids.size, bank.K))
    for j, cid in enumerate(ids):
        cm = bank.classes[int(cid)]
        if cm.kind == "gmm":
            means[j] = (cm.weights * cm.mus).sum(axis=1)
        else:
            means[j] = cm.centers.mean(axis=0)
    return ids, means


def predict_ncm(class_ids, means, Z) -> np.ndarray:
    """Nearest-class-mean baseline; ties go to the smallest class id."""
    class_ids = np.asarray(class_ids, dtype=np.int64)
    means = np.asarray(means, dtype=np.float64)
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if Z.shape[1] != means.shape[1]:
        raise ValidationError(
            f"feature matrix width {Z.shape[1]} does not match means width {means.shape[1]}"
        )
    order = np.argsort(class_ids, kind="stable")
    class_ids = class_ids[order]
    means = means[order]
    d2 = ((Z[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    return class_ids[np.argmin(d2, axis=1)]
