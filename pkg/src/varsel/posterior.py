"""Diagonal-Gaussian weight posterior and its natural-gradient (IVON-style) update.

The posterior is ``q(theta) = N(mean, diag(variance))`` with

    variance = 1 / (lam * (hess + weight_decay))

so ``hess`` plays the role of a per-parameter curvature estimate and
``lam * weight_decay`` is the precision of the zero-mean isotropic prior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.special import ndtri


@dataclass(frozen=True)
class IvonHyper:
    lr: float = 0.02
    beta1: float = 0.9
    beta2: float = 0.99995
    h0: float = 0.5
    weight_decay: float = 5e-5
    clip_radius: float = 1e-3
    grad_clip_norm: float = 25.0
    lam: float = 5e5

    def __post_init__(self) -> None:
        for name in ("lr", "h0", "weight_decay", "clip_radius", "lam"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be a finite positive number, got {value!r}")
        # inf disables clipping
        if not self.grad_clip_norm > 0:
            raise ValueError(f"grad_clip_norm must be positive, got {self.grad_clip_norm!r}")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {value!r}")


@dataclass
class Posterior:
    """Diagonal Gaussian over ``D`` weights.

    ``lam`` may be ``inf`` to represent a point mass at ``mean`` (zero
    variance); point-estimate baselines are stored this way.
    """

    mean: np.ndarray
    hess: np.ndarray
    lam: float
    weight_decay: float
    step_count: int = 0

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.hess = np.asarray(self.hess, dtype=np.float64)
        if self.mean.ndim != 1 or self.mean.shape != self.hess.shape:
            raise ValueError(
                f"mean and hess must be 1-D of equal length, got {self.mean.shape} and {self.hess.shape}"
            )
        if not (self.lam > 0):
            raise ValueError(f"lam must be positive, got {self.lam!r}")
        if not (self.weight_decay > 0 and math.isfinite(self.weight_decay)):
            raise ValueError(f"weight_decay must be a finite positive number, got {self.weight_decay!r}")
        if np.any(self.hess < 0) or not np.all(np.isfinite(self.hess)):
            raise ValueError("hess must be finite and non-negative")
        if not np.all(np.isfinite(self.mean)):
            raise ValueError("mean must be finite")
        if self.step_count < 0:
            raise ValueError("step_count must be non-negative")

    @classmethod
    def point_mass(cls, mean: np.ndarray, weight_decay: float = 1e-2) -> "Posterior":
        mean = np.asarray(mean, dtype=np.float64)
        return cls(mean=mean, hess=np.zeros_like(mean), lam=math.inf, weight_decay=weight_decay)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def precision(self) -> np.ndarray:
        return self.lam * (self.hess + self.weight_decay)

    @property
    def variance(self) -> np.ndarray:
        return 1.0 / self.precision

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)

    @property
    def prior_variance(self) -> float:
        return 1.0 / (self.lam * self.weight_decay)

    def copy(self) -> "Posterior":
        return replace(self, mean=self.mean.copy(), hess=self.hess.copy())


@dataclass
class OptimizerState:
    momentum: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def zeros(cls, dim: int) -> "OptimizerState":
        return cls(momentum=np.zeros(dim))


def init_posterior(dim: int, hyper: IvonHyper, mean_init: np.ndarray | None = None) -> Posterior:
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if mean_init is None:
        mean = np.zeros(dim)
    else:
        mean = np.array(mean_init, dtype=np.float64)
        if mean.shape != (dim,):
            raise ValueError(f"mean_init has shape {mean.shape}, expected ({dim},)")
    return Posterior(
        mean=mean,
        hess=np.full(dim, float(hyper.h0)),
        lam=hyper.lam,
        weight_decay=hyper.weight_decay,
    )


def stratified_normal(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """Latin-hypercube standard normals: each column hits every 1/n quantile stratum once.

    Every entry is marginally N(0, 1); only the joint law within a column changes.
    """
    strata = rng.permuted(np.broadcast_to(np.arange(n)[:, None], (n, dim)), axis=0)
    return ndtri((strata + rng.random((n, dim))) / n)


def sample_weights(
    post: Posterior,
    rng: np.random.Generator,
    n: int | None = None,
    *,
    antithetic: bool = False,
    stratified: bool = False,
) -> np.ndarray:
    """Draw ``mean + std * z``; shape ``(D,)`` or ``(n, D)`` when ``n`` is given.

    ``antithetic`` pairs every ``z`` with ``-z`` (``n`` must be even);
    ``stratified`` uses Latin-hypercube normals. Both are variance-reduction
    options for multi-sample steps and are off by default.
    """
    if n is None:
        if antithetic or stratified:
            raise ValueError("antithetic/stratified sampling needs an explicit sample count")
        return post.mean + post.std * rng.standard_normal(post.dim)
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if antithetic and n % 2:
        raise ValueError("antithetic sampling needs an even sample count")
    k = n // 2 if antithetic else n
    z = stratified_normal(rng, k, post.dim) if stratified else rng.standard_normal((k, post.dim))
    if antithetic:
        z = np.concatenate([z, -z])
    return post.mean + post.std * z


def _clip_rows(grads: np.ndarray, max_norm: float) -> np.ndarray:
    if math.isinf(max_norm):
        return grads
    norms = np.sqrt(np.einsum("sd,sd->s", grads, grads))
    if np.all(norms <= max_norm):
        return grads
    scale = np.minimum(1.0, max_norm / np.maximum(norms, 1e-300))
    return grads * scale[:, None]


def ivon_step(
    post: Posterior,
    state: OptimizerState,
    grad: np.ndarray,
    sampled_weights: np.ndarray,
    hyper: IvonHyper,
    lr: float | None = None,
) -> tuple[Posterior, OptimizerState]:
    """One natural-gradient step on the variational objective.

    ``grad`` and ``sampled_weights`` are ``(D,)`` for a single MC draw or
    ``(S, D)`` for ``S`` draws from ``post``; per-draw curvature estimates
    and gradients are averaged. ``lr`` overrides ``hyper.lr`` (warmup).
    Inputs are not modified; new objects are returned.
    """
    grads = np.atleast_2d(np.asarray(grad, dtype=np.float64))
    thetas = np.atleast_2d(np.asarray(sampled_weights, dtype=np.float64))
    if grads.shape != thetas.shape or grads.shape[1] != post.dim:
        raise ValueError(
            f"grad {grads.shape} and sampled_weights {thetas.shape} must match posterior dim {post.dim}"
        )
    if not np.all(np.isfinite(grads)):
        raise ValueError("non-finite gradient")
    if state.momentum.shape != post.mean.shape:
        raise ValueError("optimizer state does not match posterior dimension")

    grads = _clip_rows(grads, hyper.grad_clip_norm)
    lam, delta = post.lam, post.weight_decay
    h, m = post.hess, post.mean
    if math.isinf(lam):
        raise ValueError("cannot take a variational step on a point-mass posterior")

    # E[g * (theta - m)] * precision estimates the expected Hessian diagonal.
    n = grads.shape[0]
    h_hat = np.einsum("sd,sd->d", grads, thetas - m) / n * lam * (h + delta)
    h_target = hyper.beta2 * h + (1.0 - hyper.beta2) * h_hat
    radius = hyper.clip_radius * (h + delta)
    h_new = np.maximum(h + np.clip(h_target - h, -radius, radius), 0.0)

    g_bar = grads.sum(axis=0) / n
    momentum = hyper.beta1 * state.momentum + (1.0 - hyper.beta1) * g_bar
    t = post.step_count + 1
    m_hat = momentum / (1.0 - hyper.beta1**t)
    step = hyper.lr if lr is None else lr
    m_new = m - step * (m_hat + delta * m) / (h_new + delta)

    new_post = Posterior(mean=m_new, hess=h_new, lam=lam, weight_decay=delta, step_count=t)
    return new_post, OptimizerState(momentum=momentum)


def gaussian_kl(mean: np.ndarray, variance: np.ndarray, prior_variance: float) -> float:
    """KL( N(mean, diag(variance)) || N(0, prior_variance * I) )."""
    mean = np.asarray(mean, dtype=np.float64)
    variance = np.asarray(variance, dtype=np.float64)
    ratio = variance / prior_variance
    return float(0.5 * np.sum(ratio + mean**2 / prior_variance - 1.0 - np.log(ratio)))


def elbo_estimate(
    post: Posterior,
    loss_fn: Callable[[np.ndarray], float],
    n_samples: int,
    rng: np.random.Generator,
) -> float:
    """Monte Carlo estimate of ``lam * E_q[loss] + KL(q || prior)``."""
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    if math.isinf(post.lam):
        raise ValueError("objective is undefined for a point-mass posterior")
    total = 0.0
    for _ in range(n_samples):
        value = float(loss_fn(sample_weights(post, rng)))
        if not math.isfinite(value):
            raise ValueError("non-finite loss")
        total += value
    expected = total / n_samples
    return post.lam * expected + gaussian_kl(post.mean, post.variance, post.prior_variance)

