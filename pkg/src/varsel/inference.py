"""Posterior-mean, sampled and MC-dropout predictive inference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ClassifierSpec, forward
from .posterior import Posterior, sample_weights

DEFAULT_TEST_SAMPLES = 64
DEFAULT_VAL_SAMPLES = 8


@dataclass
class PredictiveSummary:
    """Per-class mean and (N-1)-normalized standard deviation over ``n_samples`` outputs.

    ``mu`` and ``sigma`` have shape ``(C,)`` for one input or ``(B, C)`` for a
    batch. ``samples`` (``(N, ..., C)``) is kept only on request.
    """

    mu: np.ndarray
    sigma: np.ndarray
    n_samples: int
    samples: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.mu.shape != self.sigma.shape:
            raise ValueError("mu and sigma must have the same shape")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if np.any(self.sigma < 0):
            raise ValueError("sigma must be non-negative")

    def __len__(self) -> int:
        return 1 if self.mu.ndim == 1 else self.mu.shape[0]

    def row(self, i: int) -> "PredictiveSummary":
        return PredictiveSummary(self.mu[i], self.sigma[i], self.n_samples)


def summarize(samples: np.ndarray, keep_samples: bool = False) -> PredictiveSummary:
    """Mean and standard deviation over the leading (sample) axis.

    With a single sample ``sigma`` is reported as zeros; sampled selectors
    that need a spread should require ``N >= 2`` themselves.
    """
    p = np.asarray(samples, dtype=np.float64)
    n = p.shape[0]
    if n < 1:
        raise ValueError("need at least one sample")
    # shifting by the first sample keeps identical samples exact (mu == p[0])
    mu = p[0] + (p - p[0]).mean(axis=0)
    if n == 1:
        sigma = np.zeros_like(mu)
    else:
        sigma = np.sqrt(((p - mu) ** 2).sum(axis=0) / (n - 1))
    return PredictiveSummary(mu, sigma, n, p if keep_samples else None)


def predict_mean(post: Posterior, spec: ClassifierSpec, features: np.ndarray) -> np.ndarray:
    """One deterministic pass at the posterior mean (variances ignored)."""
    return forward(post.mean, spec, features)


def predict_sampled(
    post: Posterior,
    spec: ClassifierSpec,
    features: np.ndarray,
    n: int,
    rng: np.random.Generator,
    *,
    dropout: bool = False,
    keep_samples: bool = False,
) -> PredictiveSummary:
    """Average ``n`` forward passes, each at an independent weight draw from ``post``.

    One weight draw is shared by every input in ``features`` for a given pass.
    ``dropout`` additionally enables the architecture's dropout in each pass.
    """
    if n < 2:
        raise ValueError(f"need n >= 2 samples for a standard deviation, got {n}")
    outputs = []
    for _ in range(n):
        w = sample_weights(post, rng)
        outputs.append(forward(w, spec, features, dropout_rng=rng if dropout else None))
    return summarize(np.stack(outputs), keep_samples)


def predict_mc_dropout(
    weights: np.ndarray,
    spec: ClassifierSpec,
    features: np.ndarray,
    n: int,
    rate: float,
    rng: np.random.Generator,
    *,
    keep_samples: bool = False,
) -> PredictiveSummary:
    if not 0.0 < rate < 1.0:
        raise ValueError(f"dropout rate must lie in (0, 1), got {rate}")
    if n < 2:
        raise ValueError(f"need n >= 2 samples for a standard deviation, got {n}")
    outputs = [forward(weights, spec, features, dropout_rng=rng, dropout_rate=rate) for _ in range(n)]
    return summarize(np.stack(outputs), keep_samples)
