"""Monte-Carlo predictive statistics and error bounds for a trained generator."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import generate, sample_noise

DEFAULT_SAMPLES = 20
BOUND_REDUCTION = "mean over components and reference parameters"
# rows pushed through the generator at once
_CHUNK_ROWS = 8192


@dataclass(frozen=True)
class PredictiveStats:
    """Ensemble mean and unbiased variance; arrays are (N_u,) or (N, N_u)."""

    mean: np.ndarray
    variance: np.ndarray
    sample_count: int
    samples: Optional[np.ndarray] = None  # (..., K, N_u) when kept

    def __post_init__(self):
        if self.sample_count < 2:
            raise ValueError("variance needs at least 2 samples")
        if np.any(self.variance < 0):
            raise ValueError("negative variance")

    @property
    def std(self):
        return np.sqrt(self.variance)


def _as_rng(rng):
    if rng is None or isinstance(rng, (int, np.integer)):
        return np.random.default_rng(0 if rng is None else rng)
    return rng


def ensemble_samples(model, c, n_samples, rng=None):
    """Generator outputs for each parameter row: shape (N, K, N_u).

    The noise for every (row, sample) pair is drawn up front in row-major
    order, so chunking changes the result only by BLAS rounding.
    """
    c = np.atleast_2d(np.asarray(c, dtype=np.float64))
    rng = _as_rng(rng)
    n = c.shape[0]
    z = sample_noise(rng, n * n_samples, model.config.noise_dim)
    rows = np.repeat(c, n_samples, axis=0)
    out = np.empty((n * n_samples, model.n_u))
    for lo in range(0, n * n_samples, _CHUNK_ROWS):
        hi = min(lo + _CHUNK_ROWS, n * n_samples)
        out[lo:hi] = generate(model, z[lo:hi], rows[lo:hi])
    return out.reshape(n, n_samples, model.n_u)


def _moments(samples):
    mean = samples.mean(axis=-2)
    resid = samples - mean[..., None, :]
    var = np.einsum("...kj,...kj->...j", resid, resid) / (samples.shape[-2] - 1)
    return mean, var


def predict_stats(model, c, n_samples=DEFAULT_SAMPLES, rng=None, keep_samples=False):
    """Ensemble mean and unbiased variance of ``G(z|c)`` over uniform noise.

    ``c`` is one parameter vector (returns (N_u,) arrays) or a batch of rows
    (returns (N, N_u) arrays).
    """
    if n_samples < 2:
        raise ValueError(f"variance needs K >= 2 samples, got {n_samples}")
    c_arr = np.asarray(c, dtype=np.float64)
    single = c_arr.ndim == 1
    samples = ensemble_samples(model, c_arr, n_samples, rng)
    mean, var = _moments(samples)
    if single:
        samples, mean, var = samples[0], mean[0], var[0]
    return PredictiveStats(mean, var, int(n_samples), samples if keep_samples else None)


def normal_interval(stats, z_score=1.96):
    """Elementwise ``mean -/+ z_score * std``."""
    if z_score < 0:
        raise ValueError("z_score must be >= 0")
    half = z_score * stats.std
    return stats.mean - half, stats.mean + half


@dataclass(frozen=True)
class MarkovEstimate:
    """Sampled right-hand side of the Markov bound before division by ``a``.

    ``terms`` holds, per reference parameter and component, the ensemble
    mean of ``(u_true - G)^2`` minus the unbiased ensemble variance.
    """

    terms: np.ndarray
    sample_count: int

    @property
    def expectation(self):
        return float(self.terms.mean())

    @property
    def expectation_stderr(self):
        t = self.terms.reshape(-1)
        return float(t.std(ddof=1) / np.sqrt(t.size)) if t.size > 1 else 0.0

    def bound(self, a):
        a = np.asarray(a, dtype=np.float64)
        if np.any(a <= 0):
            raise ValueError("threshold a must be > 0")
        out = np.maximum(self.expectation, 0.0) / a
        return float(out) if out.ndim == 0 else out

    def standard_error(self, a):
        a = np.asarray(a, dtype=np.float64)
        out = self.expectation_stderr / a
        return float(out) if out.ndim == 0 else out


def markov_bound_terms(model, reference, n_samples=DEFAULT_SAMPLES, rng=None):
    sols = np.asarray(reference.solutions, dtype=np.float64)
    if sols.shape[0] == 0:
        raise ValueError("reference set is empty")
    if n_samples < 2:
        raise ValueError(f"need K >= 2 samples, got {n_samples}")
    samples = ensemble_samples(model, reference.params, n_samples, rng)
    _, var = _moments(samples)
    sq = ((samples - sols[:, None, :]) ** 2).mean(axis=1)
    return MarkovEstimate(sq - var, int(n_samples))


def markov_error_bound(model, reference, a, n_samples=DEFAULT_SAMPLES, rng=None):
    """Upper bound on ``P[(u_true - u_hat)^2 >= a]``, floored at 0.

    ``a`` may be a scalar or an array of thresholds; the expectation is
    sampled once and shared across thresholds.
    """
    return markov_bound_terms(model, reference, n_samples, rng).bound(a)


def exceedance_frequency(u_true, u_hat, a):
    """Fraction of entries with ``(u_true - u_hat)^2 >= a``, for each threshold."""
    sq = (np.asarray(u_true, dtype=np.float64) - np.asarray(u_hat, dtype=np.float64)) ** 2
    sq = np.sort(sq.reshape(-1))
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    freq = 1.0 - np.searchsorted(sq, a, side="left") / sq.size
    return freq
