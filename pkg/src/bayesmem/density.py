"""1-D density models: per-feature GMMs fit by EM, and Gaussian-kernel KDE.

Each class's knowledge is a bank of these models, one per feature
dimension; this module owns fitting and pointwise log-density evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from bayesmem import backend
from bayesmem.utils import ValidationError

SIGMA_FLOOR = 1e-4
BANDWIDTH_FLOOR = 1e-4

# Stop EM when the data log-likelihood improves by less than this.
EM_TOL = 1e-6
EM_MAX_ITER = 200
# A component whose responsibility mass drops below this fraction of N is
# re-seeded on the worst-explained sample.
RESCUE_FRAC = 1e-8


@dataclass(frozen=True)
class EmConfig:
    """EM settings; defaults match the shipped estimator."""

    max_iter: int = EM_MAX_ITER
    tol: float = EM_TOL
    sigma_floor: float = SIGMA_FLOOR
    rescue_frac: float = RESCUE_FRAC


@dataclass(frozen=True)
class GaussianComponent:
    weight: float
    mu: float
    sigma: float


@dataclass(frozen=True)
class Gmm1D:
    """Mixture of Gaussians over one feature dimension, sorted by mean."""

    components: tuple[GaussianComponent, ...]

    @property
    def n_components(self) -> int:
        return len(self.components)

    def arrays(self):
        w = np.array([c.weight for c in self.components])
        mu = np.array([c.mu for c in self.components])
        sg = np.array([c.sigma for c in self.components])
        return w, mu, sg


@dataclass(frozen=True)
class Kde1D:
    """Gaussian KDE over one feature dimension: stored samples + bandwidth."""

    centers: np.ndarray
    bandwidth: float

    def __post_init__(self):
        object.__setattr__(self, "centers", np.asarray(self.centers, dtype=np.float64))


DensityModel = Union[Gmm1D, Kde1D]


@dataclass
class GmmFitResult:
    """A fitted model plus the EM byproducts the memory module needs.

    loglik_trace holds the data log-likelihood at every EM iteration;
    rescue_iters marks iterations where a collapsed component was re-seeded
    (a restart, so the trace may legitimately drop right there and the
    monotonicity guarantee applies within the segments between rescues).
    """

    model: Gmm1D
    counts: np.ndarray
    sums: np.ndarray
    sumsqs: np.ndarray
    n_iter: int
    loglik_trace: Optional[np.ndarray] = field(default=None)
    rescue_iters: Optional[np.ndarray] = field(default=None)


def effective_components(n_samples: int, s_requested: int) -> int:
    """Cap the component count so no component is fit to fewer than ~2 samples."""
    return min(s_requested, max(1, n_samples // 2))


def _check_samples(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValidationError("cannot fit a density to an empty sample list")
    if not np.all(np.isfinite(x)):
        raise ValidationError("samples contain non-finite values")
    return x


def fit_gmm(samples, s_requested: int, seed: int = 0, config: EmConfig = EmConfig()) -> Gmm1D:
    """Fit a 1-D GMM with up to `s_requested` components.

    Initialization is deterministic (quantiles), so `seed` is currently
    inert; it is part of the signature so stochastic initializers can be
    added without breaking callers, and so per-feature seeds can be
    threaded through memory formation.
    """
    return fit_gmm_details(samples, s_requested, seed, config).model


def fit_gmm_details(
    samples,
    s_requested: int,
    seed: int = 0,
    config: EmConfig = EmConfig(),
    track_loglik: bool = False,
) -> GmmFitResult:
    """fit_gmm plus sufficient statistics, iteration count, optional LL trace."""
    x = _check_samples(samples)
    if s_requested < 1:
        raise ValidationError(f"s_requested must be >= 1, got {s_requested}")
    s = effective_components(x.size, s_requested)
    out = backend.gmm_fit_batch(
        x[None, :],
        s,
        config.max_iter,
        config.tol,
        config.sigma_floor,
        config.rescue_frac,
        track_loglik=track_loglik,
    )
    model = gmm_from_arrays(out["weights"][0], out["mus"][0], out["sigmas"][0])
    return GmmFitResult(
        model=model,
        counts=out["counts"][0],
        sums=out["sums"][0],
        sumsqs=out["sumsqs"][0],
        n_iter=int(out["n_iter"][0]),
        loglik_trace=out["loglik_traces"][0] if track_loglik else None,
        rescue_iters=out["rescue_iters"][0] if track_loglik else None,
    )


def gmm_from_arrays(weights, mus, sigmas) -> Gmm1D:
    comps = tuple(
        GaussianComponent(float(w), float(m), float(s))
        for w, m, s in zip(weights, mus, sigmas)
    )
    return Gmm1D(components=comps)


def silverman_bandwidth(samples) -> float:
    """Rule-of-thumb kernel width: 1.06 * std * N^(-1/5), floored."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    h = 1.06 * backend.population_std(x) * x.size ** (-0.2)
    return max(h, BANDWIDTH_FLOOR)


def fit_kde(samples, bandwidth: Optional[float] = None) -> Kde1D:
    """Store the samples as kernel centers; derive bandwidth if not given."""
    x = _check_samples(samples)
    if bandwidth is None:
        h = silverman_bandwidth(x)
    else:
        if bandwidth <= 0:
            raise ValidationError(f"bandwidth must be positive, got {bandwidth}")
        h = max(float(bandwidth), BANDWIDTH_FLOOR)
    return Kde1D(centers=x.copy(), bandwidth=h)


def gmm_log_pdf(model: Gmm1D, x):
    """Mixture log-density at x (scalar or array), via log-sum-exp."""
    xs = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if not np.all(np.isfinite(xs)):
        raise ValidationError("log_pdf requires finite x")
    w, mu, sg = model.arrays()
    lpdf = backend.gmm_feature_log_pdf(xs[:, None], w[None, :], mu[None, :], sg[None, :])[:, 0]
    return float(lpdf[0]) if np.isscalar(x) or np.asarray(x).ndim == 0 else lpdf


def kde_log_pdf(model: Kde1D, x):
    """KDE log-density at x (scalar or array), via log-sum-exp."""
    xs = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if not np.all(np.isfinite(xs)):
        raise ValidationError("log_pdf requires finite x")
    lpdf = backend.kde_feature_log_pdf(
        xs[:, None], model.centers[:, None], np.array([model.bandwidth])
    )[:, 0]
    return float(lpdf[0]) if np.isscalar(x) or np.asarray(x).ndim == 0 else lpdf


def log_pdf(model: DensityModel, x):
    """Evaluate either density variant at x."""
    if isinstance(model, Gmm1D):
        return gmm_log_pdf(model, x)
    if isinstance(model, Kde1D):
        return kde_log_pdf(model, x)
    raise ValidationError(f"not a density model: {type(model).__name__}")
