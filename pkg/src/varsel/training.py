"""Mini-batch training loops: IVON (variational) and AdamW (point estimate), with
early stopping on validation C@(1-5)%."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .inference import DEFAULT_VAL_SAMPLES, predict_sampled
from .metrics import cov_low_risk, curve_from_arrays
from .model import ClassifierSpec, Dataset, batch_loss_and_grad, forward, init_weights, soft_accuracy_batch
from .posterior import IvonHyper, OptimizerState, Posterior, init_posterior, ivon_step, sample_weights
from .selection import Selector, score_batch

log = logging.getLogger(__name__)

OPTIMIZERS = ("ivon", "adamw")
TARGETS = ("histogram", "majority")
SCHEDULES = ("constant", "cosine")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class AdamWHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    grad_clip_norm: float = 10.0

    def __post_init__(self) -> None:
        for name in ("lr", "eps", "grad_clip_norm"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "ivon"
    epochs: int = 10
    batch_size: int = 128
    warmup_epochs: float = 1.0
    # MC draws per IVON step
    train_samples: int = 1
    val_samples: int = DEFAULT_VAL_SAMPLES
    early_stopping: bool = True
    # None means the training-set size
    lam: float | None = None
    # "majority": one-hot of the most frequent annotation (lowest class on ties)
    target: str = "histogram"
    # learning-rate shape after warmup
    schedule: str = "cosine"

    def __post_init__(self) -> None:
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.train_samples < 1 or self.val_samples < 2:
            raise ValueError("epochs >= 0, batch_size >= 1, train_samples >= 1 and val_samples >= 2 are required")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.target not in TARGETS:
            raise ValueError(f"target must be one of {TARGETS}, got {self.target!r}")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be non-negative")


@dataclass
class TrainResult:
    posterior: Posterior
    spec: ClassifierSpec
    optimizer: str
    best_epoch: int
    trace: list[dict] = field(default_factory=list)


def _clip(g: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.sqrt(g @ g))
    return g * (max_norm / norm) if norm > max_norm else g


def scheduled_lr(base: float, step: int, warmup_steps: int, total_steps: int, schedule: str) -> float:
    """Linear warmup to ``base``, then constant or cosine decay to 0 at ``total_steps``."""
    if warmup_steps > 0 and step < warmup_steps:
        return base * step / warmup_steps
    if schedule == "constant" or total_steps <= warmup_steps:
        return base
    frac = (step - warmup_steps) / (total_steps - warmup_steps)
    return base * 0.5 * (1.0 + math.cos(math.pi * min(frac, 1.0)))


def validation_score(
    post: Posterior, spec: ClassifierSpec, val: Dataset, n_samples: int, rng: np.random.Generator
) -> tuple[float, float]:
    """``(C@(1-5)%, soft accuracy)`` on ``val`` with the g_mean selector."""
    x = val.features
    if math.isinf(post.lam):
        k, conf = score_batch(forward(post.mean, spec, x), Selector.MAXPROB)
    else:
        k, conf = score_batch(predict_sampled(post, spec, x, n_samples, rng), Selector.MEAN)
    acc = soft_accuracy_batch(k, val.annotations)
    return cov_low_risk(curve_from_arrays(conf, acc)), float(acc.mean())


def train(
    train_set: Dataset,
    val_set: Dataset | None,
    spec: ClassifierSpec,
    config: TrainConfig,
    seed: int,
    ivon: IvonHyper | None = None,
    adamw: AdamWHyper | None = None,
) -> TrainResult:
    """Train and return the best-validation-epoch model (the last one without early stopping).

    The returned posterior is a point mass for AdamW. With ``epochs=0`` the
    initialization is returned unchanged.
    """
    if len(train_set) == 0:
        raise ValueError("empty training set")
    init_ss, data_ss, eval_ss = np.random.SeedSequence(seed).spawn(3)
    w0 = init_weights(spec, np.random.default_rng(init_ss))
    data_rng = np.random.default_rng(data_ss)
    eval_rng = np.random.default_rng(eval_ss)

    x_all = train_set.features
    t_all = train_set.targets(spec.num_classes)
    if config.target == "majority":
        t_all = np.eye(spec.num_classes)[np.argmax(t_all, axis=1)]
    n = x_all.shape[0]
    steps_per_epoch = math.ceil(n / config.batch_size)
    warmup_steps = int(round(config.warmup_epochs * steps_per_epoch))
    total_steps = config.epochs * steps_per_epoch
    use_dropout = spec.dropout_rate > 0

    if config.optimizer == "ivon":
        hyper = replace(ivon or IvonHyper(), lam=float(n) if config.lam is None else float(config.lam))
        post = init_posterior(spec.n_params, hyper, w0)
        state = OptimizerState.zeros(spec.n_params)
    else:
        hyper = adamw or AdamWHyper()
        post = Posterior.point_mass(w0)
        m1 = np.zeros(spec.n_params)
        m2 = np.zeros(spec.n_params)

    best = post.copy()
    best_epoch = 0
    best_score = -math.inf
    trace: list[dict] = []
    if config.epochs == 0:
        return TrainResult(post, spec, config.optimizer, 0, trace)

    step = 0
    for epoch in range(1, config.epochs + 1):
        order = data_rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            x, t = x_all[idx], t_all[idx]
            step += 1
            lr = scheduled_lr(hyper.lr, step, warmup_steps, total_steps, config.schedule)
            drop_rng = data_rng if use_dropout else None
            if config.optimizer == "ivon":
                thetas = sample_weights(post, data_rng, config.train_samples)
                grads = np.empty_like(thetas)
                batch_loss = 0.0
                for s in range(thetas.shape[0]):
                    loss, grads[s] = batch_loss_and_grad(thetas[s], spec, x, t, drop_rng)
                    batch_loss += loss / thetas.shape[0]
                _check_finite(batch_loss, epoch, step)
                post, state = ivon_step(post, state, grads, thetas, hyper, lr=lr)
            else:
                w = post.mean
                batch_loss, g = batch_loss_and_grad(w, spec, x, t, drop_rng)
                _check_finite(batch_loss, epoch, step)
                g = _clip(g, hyper.grad_clip_norm)
                m1 = hyper.beta1 * m1 + (1 - hyper.beta1) * g
                m2 = hyper.beta2 * m2 + (1 - hyper.beta2) * g * g
                m1_hat = m1 / (1 - hyper.beta1**step)
                m2_hat = m2 / (1 - hyper.beta2**step)
                w = w - lr * (m1_hat / (np.sqrt(m2_hat) + hyper.eps) + hyper.weight_decay * w)
                post = Posterior(mean=w, hess=post.hess, lam=math.inf, weight_decay=post.weight_decay, step_count=step)
            losses.append(batch_loss)

        row = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if val_set is not None and len(val_set):
            score, acc = validation_score(post, spec, val_set, config.val_samples, eval_rng)
            row.update(val_cov_low_risk=score, val_acc=acc)
        else:
            score = float(epoch)
        trace.append(row)
        log.debug("epoch %d %s", epoch, row)
        if not config.early_stopping or score > best_score:
            best, best_epoch, best_score = post.copy(), epoch, score
    return TrainResult(best, spec, config.optimizer, best_epoch, trace)


def _check_finite(loss: float, epoch: int, step: int) -> None:
    if not math.isfinite(loss):
        raise TrainingDiverged(f"non-finite training loss at epoch {epoch}, step {step}; try a smaller lr")
