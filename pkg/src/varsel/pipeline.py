"""End-to-end run steps shared by the CLI and the acceptance tests.

Inference modes:
    ``mean``        one pass at the posterior mean (scored by maxprob);
    ``sampled``     ``N`` posterior draws (mean / mean_minus_std / projection);
    ``mc_dropout``  ``N`` dropout passes at the mean weights (same selectors).
Point-mass (AdamW) checkpoints support all three; ``sampled`` then repeats
the mean exactly.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .config import RunConfig
from .evalio import Checkpoint, records_from_scores
from .inference import PredictiveSummary, predict_mc_dropout, predict_mean, predict_sampled
from .metrics import EvalRecord, MetricsConfig, build_curve, compute_metric, route
from .mixture import MixtureSpec, mix_indices
from .model import ClassifierSpec, Dataset, forward, gen_synthetic_task
from .posterior import sample_weights
from .selection import Selector, score_batch
from .training import TrainResult, train

log = logging.getLogger(__name__)

SAMPLED_SELECTORS = (Selector.MEAN, Selector.MEAN_MINUS_STD, Selector.PROJECTION)
ROUTED = "routed"
WIDE_KEYS = ("method", "mode", "n_samples", "selector", "alpha", "seed")
LONG_KEYS = ("method", "mode", "n_samples", "selector", "metric", "alpha", "seed", "value")
CURVE_KEYS = ("method", "mode", "n_samples", "selector", "alpha", "seed", "threshold", "coverage", "risk")


def metrics_config(cfg: RunConfig) -> MetricsConfig:
    e = cfg.eval
    return MetricsConfig(metrics=e.metrics, ece_bins=e.ece_bins, ece_rescale=e.ece_rescale, phi_threshold=e.phi_threshold)


def seed_datasets(cfg: RunConfig, seed: int) -> tuple[Dataset, Dataset, Dataset, Dataset]:
    return gen_synthetic_task(cfg.task, seed)


def train_seed(cfg: RunConfig, seed: int, train_set: Dataset, val_set: Dataset | None) -> TrainResult:
    return train(train_set, val_set, cfg.classifier, cfg.train, seed, ivon=cfg.ivon, adamw=cfg.adamw)


def checkpoint_from(result: TrainResult, cfg: RunConfig, seed: int) -> Checkpoint:
    hyper = cfg.ivon if result.optimizer == "ivon" else cfg.adamw
    return Checkpoint(
        posterior=result.posterior,
        model=result.spec,
        optimizer=result.optimizer,
        hyper=dict(vars(hyper)),
        meta={"seed": seed, "best_epoch": result.best_epoch, "config": cfg.to_dict()},
    )


@dataclass
class ModeOutput:
    """Per-selector ``(predicted, confidence)`` arrays for one inference mode on one dataset."""

    mode: str
    n_samples: int
    scores: dict[Selector, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)


def score_source(source: PredictiveSummary | np.ndarray, mode: str, n_samples: int) -> ModeOutput:
    out = ModeOutput(mode, n_samples)
    if isinstance(source, PredictiveSummary):
        for sel in SAMPLED_SELECTORS:
            out.scores[sel] = score_batch(source, sel)
    else:
        out.scores[Selector.MAXPROB] = score_batch(source, Selector.MAXPROB)
    return out


def mode_rng(seed: int, mode: str, n: int, split: str) -> np.random.Generator:
    # independent, order-free stream per (seed, mode, N, split)
    key = [seed, sum(map(ord, mode)), n, sum(map(ord, split))]
    return np.random.default_rng(np.random.SeedSequence(key))


def run_mode(
    ckpt: Checkpoint, dataset: Dataset, mode: str, n_samples: int, seed: int, split: str, dropout_rate: float = 0.0
) -> ModeOutput:
    """Inference for one mode. ``n_samples == 1`` falls back to maxprob on a single pass."""
    spec: ClassifierSpec = ckpt.model
    post = ckpt.posterior
    x = dataset.features
    if mode == "mean":
        return score_source(predict_mean(post, spec, x), mode, 1)
    rng = mode_rng(seed, mode, n_samples, split)
    if mode == "sampled":
        if n_samples == 1:
            log.info("N=1: sigma is undefined, scoring a single posterior draw with maxprob")
            return score_source(forward(sample_weights(post, rng), spec, x), mode, 1)
        return score_source(predict_sampled(post, spec, x, n_samples, rng), mode, n_samples)
    if mode == "mc_dropout":
        if not 0.0 < dropout_rate < 1.0:
            raise ValueError("mc_dropout mode needs eval.mc_dropout_rate in (0, 1)")
        if n_samples == 1:
            log.info("N=1: sigma is undefined, scoring a single dropout pass with maxprob")
            return score_source(forward(post.mean, spec, x, dropout_rng=rng, dropout_rate=dropout_rate), mode, 1)
        return score_source(predict_mc_dropout(post.mean, spec, x, n_samples, dropout_rate, rng), mode, n_samples)
    raise ValueError(f"unknown inference mode {mode!r}")


def sampled_summary(ckpt: Checkpoint, dataset: Dataset, n_samples: int, seed: int, split: str) -> PredictiveSummary:
    """The ``sampled``-mode summary, drawn from the same stream as :func:`run_mode`."""
    return predict_sampled(ckpt.posterior, ckpt.model, dataset.features, n_samples, mode_rng(seed, "sampled", n_samples, split))


def to_records(out: ModeOutput, dataset: Dataset) -> dict[Selector, list[EvalRecord]]:
    return {sel: records_from_scores(dataset, k, c) for sel, (k, c) in out.scores.items()}


def _mix(scored: Mapping[Selector, Sequence[EvalRecord]], ood: Mapping[Selector, Sequence[EvalRecord]] | None, alpha, seed, size):
    if alpha == 0.0 and size == "max-balanced":
        return dict(scored)
    if ood is None:
        raise ValueError(f"alpha={alpha} needs OOD records")
    first = next(iter(scored))
    is_ood, index = mix_indices(len(scored[first]), len(ood[first]), MixtureSpec(alpha, seed, size))
    return {s: [ood[s][i] if o else scored[s][i] for o, i in zip(is_ood, index)] for s in scored}


def report_rows(
    test: Mapping[Selector, Sequence[EvalRecord]],
    *,
    method: str,
    mode: str,
    n_samples: int,
    seed: int,
    mcfg: MetricsConfig,
    alphas: Sequence[float] = (0.0,),
    ood: Mapping[Selector, Sequence[EvalRecord]] | None = None,
    val: Mapping[Selector, Sequence[EvalRecord]] | None = None,
    mixture_size: str | int = "max-balanced",
    curves: bool = False,
) -> tuple[list[dict], list[dict], list[dict]]:
    """Wide rows (one per selector, plus a ``routed`` row), long rows and curve points."""
    wide, long, curve_rows = [], [], []
    base = {"method": method, "mode": mode, "n_samples": n_samples, "seed": seed}
    for alpha in alphas:
        mixed = _mix(test, ood, float(alpha), seed, mixture_size)
        per_sel = {}
        for sel, recs in mixed.items():
            vals = {m: compute_metric(m, recs, sel, mcfg, val.get(sel) if val else None) for m in mcfg.metrics}
            per_sel[sel] = vals
            wide.append({**base, "selector": sel.value, "alpha": float(alpha), **vals})
            for m, v in vals.items():
                long.append({**base, "selector": sel.value, "metric": m, "alpha": float(alpha), "value": v})
            if curves:
                c = build_curve(recs)
                for t, cov, r in zip(c.thresholds, c.coverage, c.risk):
                    curve_rows.append(
                        {**base, "selector": sel.value, "alpha": float(alpha), "threshold": float(t), "coverage": float(cov), "risk": float(r)}
                    )
        if len(per_sel) > 1:
            routed = {m: per_sel[route(m, per_sel, mcfg)][m] for m in mcfg.metrics}
            wide.append({**base, "selector": ROUTED, "alpha": float(alpha), **routed})
    return wide, long, curve_rows


def wide_columns(mcfg: MetricsConfig) -> tuple[str, ...]:
    return WIDE_KEYS + tuple(mcfg.metrics)


def eval_modes(ckpt: Checkpoint, cfg: RunConfig) -> list[tuple[str, int]]:
    modes = [("mean", 1), ("sampled", cfg.eval.test_samples)]
    if cfg.eval.mc_dropout_rate > 0:
        modes.append(("mc_dropout", cfg.eval.test_samples))
    return modes


def evaluate_checkpoint(
    ckpt: Checkpoint,
    cfg: RunConfig,
    seed: int,
    val_set: Dataset,
    test_set: Dataset,
    ood_set: Dataset | None,
    modes: Sequence[tuple[str, int]] | None = None,
    alphas: Sequence[float] | None = None,
) -> tuple[list[dict], list[dict], list[dict], dict]:
    """Report rows for every (mode, N); returns ``(wide, long, curves, timing)``."""
    mcfg = metrics_config(cfg)
    alphas = cfg.eval.alphas if alphas is None else alphas
    need_ood = any(a > 0 for a in alphas)
    wide, long, curves, timing = [], [], [], {}
    # build the cached feature matrix up front so it is not billed to the first mode
    test_set.features
    for mode, n in modes or eval_modes(ckpt, cfg):
        t0 = time.perf_counter()
        test_out = run_mode(ckpt, test_set, mode, n, seed, "test", cfg.eval.mc_dropout_rate)
        timing[f"{mode}@{n}"] = time.perf_counter() - t0
        val_out = run_mode(ckpt, val_set, mode, n, seed, "val", cfg.eval.mc_dropout_rate)
        ood_recs = None
        if need_ood:
            if ood_set is None:
                raise ValueError("alphas > 0 require an OOD test set")
            ood_recs = to_records(run_mode(ckpt, ood_set, mode, n, seed, "ood", cfg.eval.mc_dropout_rate), ood_set)
        w, l, c = report_rows(
            to_records(test_out, test_set),
            method=ckpt.optimizer,
            mode=mode,
            n_samples=test_out.n_samples,
            seed=seed,
            mcfg=mcfg,
            alphas=alphas,
            ood=ood_recs,
            val=to_records(val_out, val_set),
            mixture_size=cfg.eval.mixture_size,
            curves=cfg.eval.curves,
        )
        wide += w
        long += l
        curves += c
    return wide, long, curves, timing


def runtime_linearity(timing: Mapping[int, float], min_n: int = 4) -> float:
    """Max/min ratio of per-sample runtime over grid points with ``N >= min_n`` (1.0 = perfectly linear)."""
    per = [t / n for n, t in timing.items() if n >= min_n and t > 0]
    if len(per) < 2:
        return 1.0
    return max(per) / min(per)

