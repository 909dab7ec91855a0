"""Selection functions and the selective (answer-or-abstain) model.

Every selector predicts ``k = argmax`` of the (mean) class probabilities,
ties going to the lowest class index, and differs only in the confidence it
attaches to ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .inference import PredictiveSummary


class Selector(str, Enum):
    MAXPROB = "maxprob"
    MEAN = "mean"
    MEAN_MINUS_STD = "mean_minus_std"
    PROJECTION = "projection"

    @property
    def needs_samples(self) -> bool:
        return self is not Selector.MAXPROB


@dataclass(frozen=True)
class ScoredPrediction:
    predicted_class: int
    confidence: float
    selector: Selector


@dataclass(frozen=True)
class Decision:
    """``answer`` is the predicted class, or ``None`` for an abstention."""

    answer: int | None

    @property
    def abstained(self) -> bool:
        return self.answer is None


ABSTAIN = Decision(None)


def _top(p: np.ndarray) -> int:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("expected a non-empty 1-D probability vector")
    return int(np.argmax(p))


def g_maxprob(p: np.ndarray) -> ScoredPrediction:
    k = _top(p)
    return ScoredPrediction(k, float(p[k]), Selector.MAXPROB)


def g_mean(s: PredictiveSummary) -> ScoredPrediction:
    k = _top(s.mu)
    return ScoredPrediction(k, float(s.mu[k]), Selector.MEAN)


def g_mean_minus_std(s: PredictiveSummary) -> ScoredPrediction:
    # argmax over mu, not over mu - sigma
    k = _top(s.mu)
    return ScoredPrediction(k, float(s.mu[k] - s.sigma[k]), Selector.MEAN_MINUS_STD)


def project_confidence(mu_star, sigma_star):
    """mu-coordinate of the orthogonal projection of ``(mu*, sigma*)`` onto ``mu + sigma = 1``.

    Equals ``(1 + mu* - sigma*) / 2``, a monotone map of ``mu* - sigma*``.
    Works elementwise on arrays.
    """
    out = 0.5 + (np.asarray(mu_star, dtype=np.float64) - np.asarray(sigma_star, dtype=np.float64)) / 2.0
    return float(out) if out.ndim == 0 else out


def g_projection(s: PredictiveSummary) -> ScoredPrediction:
    k = _top(s.mu)
    return ScoredPrediction(k, float(project_confidence(s.mu[k], s.sigma[k])), Selector.PROJECTION)


def selective_predict(predicted_class: int, confidence: float, gamma: float) -> Decision:
    """Answer iff ``confidence >= gamma``."""
    return Decision(int(predicted_class)) if confidence >= gamma else ABSTAIN


def score_batch(source: PredictiveSummary | np.ndarray, selector: Selector | str) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized selectors over a batch: returns ``(predicted_class, confidence)`` arrays.

    ``source`` is a ``(B, C)`` probability matrix (maxprob only) or a batched
    summary.
    """
    selector = Selector(selector)
    if isinstance(source, PredictiveSummary):
        mu, sigma = np.atleast_2d(source.mu), np.atleast_2d(source.sigma)
    else:
        if selector.needs_samples:
            raise ValueError(f"selector {selector.value!r} needs a predictive summary, got a single distribution")
        mu, sigma = np.atleast_2d(np.asarray(source, dtype=np.float64)), None
    k = np.argmax(mu, axis=1)
    rows = np.arange(mu.shape[0])
    top = mu[rows, k]
    if selector in (Selector.MAXPROB, Selector.MEAN):
        return k, top
    spread = sigma[rows, k]
    if selector is Selector.MEAN_MINUS_STD:
        return k, top - spread
    return k, project_confidence(top, spread)
