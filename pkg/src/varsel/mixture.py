"""ID/OOD evaluation mixtures with exact, seed-deterministic composition."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .metrics import EvalRecord, MetricsConfig, evaluate, route
from .selection import Selector

DEFAULT_ALPHAS = (0.0, 0.1, 0.33, 0.5, 0.67, 1.0)
MAX_BALANCED = "max-balanced"


@dataclass(frozen=True)
class MixtureSpec:
    """``target_size`` is a positive count or ``"max-balanced"``: the largest
    size both pools can supply at this ``alpha``."""

    alpha: float
    seed: int = 0
    target_size: int | str = MAX_BALANCED

    def __post_init__(self) -> None:
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha!r}")
        if isinstance(self.target_size, str):
            if self.target_size != MAX_BALANCED:
                raise ValueError(f"target_size must be a positive integer or {MAX_BALANCED!r}")
        elif int(self.target_size) != self.target_size or self.target_size < 1:
            raise ValueError(f"target_size must be a positive integer, got {self.target_size!r}")


def ood_count(alpha: float, n: int) -> int:
    return math.floor(alpha * n)


def _feasible(alpha: float, n: int, n_id: int, n_ood: int) -> bool:
    k = ood_count(alpha, n)
    return k <= n_ood and n - k <= n_id


def resolve_size(spec: MixtureSpec, n_id: int, n_ood: int) -> int:
    if spec.target_size != MAX_BALANCED:
        return int(spec.target_size)
    n = n_id + n_ood
    while n > 0 and not _feasible(spec.alpha, n, n_id, n_ood):
        n -= 1
    if n == 0:
        raise ValueError(f"pools of sizes ID={n_id}, OOD={n_ood} cannot supply any mixture at alpha={spec.alpha}")
    return n


def mix_indices(n_id: int, n_ood: int, spec: MixtureSpec) -> tuple[np.ndarray, np.ndarray]:
    """Pool membership and index of every mixed record, in mixture order.

    Returns ``(is_ood, index)``. Depends only on pool sizes and ``spec``, so
    record lists scored by different selectors mix identically.
    """
    n = resolve_size(spec, n_id, n_ood)
    k = ood_count(spec.alpha, n)
    if k > n_ood or n - k > n_id:
        raise ValueError(
            f"mixture of {n} at alpha={spec.alpha} needs {k} OOD and {n - k} ID records; "
            f"pools have {n_ood} OOD and {n_id} ID"
        )
    rng = np.random.default_rng(spec.seed)
    ood_pick = rng.choice(n_ood, size=k, replace=False) if k else np.empty(0, dtype=np.int64)
    id_pick = rng.choice(n_id, size=n - k, replace=False) if n - k else np.empty(0, dtype=np.int64)
    is_ood = np.concatenate([np.ones(k, dtype=bool), np.zeros(n - k, dtype=bool)])
    index = np.concatenate([ood_pick, id_pick]).astype(np.int64)
    order = rng.permutation(n)
    return is_ood[order], index[order]


def mix_records(
    id_records: Sequence[EvalRecord], ood_records: Sequence[EvalRecord], spec: MixtureSpec
) -> list[EvalRecord]:
    """``floor(alpha*n)`` OOD plus the rest ID, drawn without replacement and shuffled."""
    if spec.alpha > 0 and not ood_records:
        raise ValueError("OOD pool is empty")
    if spec.alpha < 1 and not id_records:
        raise ValueError("ID pool is empty")
    is_ood, index = mix_indices(len(id_records), len(ood_records), spec)
    return [ood_records[i] if o else id_records[i] for o, i in zip(is_ood, index)]


def _as_scored(records) -> tuple[dict[Selector, Sequence[EvalRecord]], bool]:
    if isinstance(records, Mapping):
        return {Selector(k): v for k, v in records.items()}, False
    return {Selector.MEAN: records}, True


def alpha_sweep(
    id_records: Sequence[EvalRecord] | Mapping[Selector, Sequence[EvalRecord]],
    ood_records: Sequence[EvalRecord] | Mapping[Selector, Sequence[EvalRecord]],
    alphas: Sequence[float] = DEFAULT_ALPHAS,
    metrics_config: MetricsConfig | None = None,
    *,
    seed: int = 0,
    target_size: int | str = MAX_BALANCED,
    val_records: Mapping[Selector, Sequence[EvalRecord]] | None = None,
) -> list[dict]:
    """One row ``{alpha, metric, selector, value}`` per (alpha, metric).

    Pools are either plain record lists (every metric computed on them) or
    per-selector mappings (metrics routed by ``metrics_config``).
    """
    config = metrics_config or MetricsConfig()
    id_scored, plain = _as_scored(id_records)
    ood_scored, _ = _as_scored(ood_records)
    if set(id_scored) != set(ood_scored):
        raise ValueError("ID and OOD pools must be scored by the same selectors")
    rows = []
    for alpha in alphas:
        spec = MixtureSpec(alpha=float(alpha), seed=seed, target_size=target_size)
        mixed = {s: mix_records(id_scored[s], ood_scored[s], spec) for s in id_scored}
        values = evaluate(mixed, config, val_records)
        for metric, value in values.items():
            sel = Selector.MEAN if plain else route(metric, mixed, config)
            rows.append(
                {"alpha": float(alpha), "metric": metric, "selector": "record" if plain else sel.value, "value": value}
            )
    return rows

