"""Selective-prediction and calibration metrics over per-sample evaluation records.

Conventions:
    * a sample is answered at threshold ``gamma`` iff ``confidence >= gamma``;
    * thresholds are swept over observed confidences only (plus ``+inf``,
      meaning abstain on everything);
    * coverage-at-risk values are fractions in ``[0, 1]``; AUC and effective
      reliability are reported multiplied by 100; ECE is raw.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import Category, Domain
from .selection import Selector

log = logging.getLogger(__name__)

LEGAL_SOFT_ACC = (0.0, 0.3, 0.6, 0.9, 1.0)
# slack on the ``risk <= R`` test so exact-boundary risks (e.g. 1/100 at R=1%)
# do not depend on summation order
RISK_ATOL = 1e-12
LOW_RISK_LEVELS = (0.01, 0.02, 0.03, 0.04, 0.05)
DEFAULT_ECE_BINS = 20
METRIC_COLUMNS = ("Acc", "ECE", "C@1", "C@5", "AUC", "Phi10", "Phi100")


@dataclass(frozen=True)
class EvalRecord:
    id: str
    confidence: float
    soft_acc: float
    predicted_class: int
    category: Category = Category.OTHER
    domain: Domain = Domain.ID

    def __post_init__(self) -> None:
        if self.soft_acc not in LEGAL_SOFT_ACC:
            raise ValueError(f"record {self.id}: soft_acc {self.soft_acc!r} not in {LEGAL_SOFT_ACC}")
        if not math.isfinite(self.confidence):
            raise ValueError(f"record {self.id}: non-finite confidence")
        object.__setattr__(self, "category", Category(self.category))
        object.__setattr__(self, "domain", Domain(self.domain))


def _arrays(records: Sequence[EvalRecord]) -> tuple[np.ndarray, np.ndarray]:
    conf = np.fromiter((r.confidence for r in records), dtype=np.float64, count=len(records))
    acc = np.fromiter((r.soft_acc for r in records), dtype=np.float64, count=len(records))
    return conf, acc


@dataclass
class RiskCoverageCurve:
    """One point per distinct confidence, thresholds descending."""

    thresholds: np.ndarray
    coverage: np.ndarray
    risk: np.ndarray
    n: int

    def __len__(self) -> int:
        return self.thresholds.shape[0]


def _group_ends(sorted_desc: np.ndarray) -> np.ndarray:
    change = np.flatnonzero(sorted_desc[1:] != sorted_desc[:-1])
    return np.append(change, sorted_desc.shape[0] - 1)


def curve_from_arrays(conf: np.ndarray, acc: np.ndarray) -> RiskCoverageCurve:
    conf = np.asarray(conf, dtype=np.float64)
    acc = np.asarray(acc, dtype=np.float64)
    n = conf.shape[0]
    if n == 0:
        raise ValueError("cannot build a risk-coverage curve from zero records")
    order = np.argsort(-conf, kind="stable")
    c = conf[order]
    cum_loss = np.cumsum(1.0 - acc[order])
    ends = _group_ends(c)
    answered = ends + 1
    return RiskCoverageCurve(
        thresholds=c[ends],
        coverage=answered / n,
        risk=cum_loss[ends] / answered,
        n=n,
    )


def build_curve(records: Sequence[EvalRecord]) -> RiskCoverageCurve:
    if len(records) == 0:
        raise ValueError("cannot build a risk-coverage curve from zero records")
    return curve_from_arrays(*_arrays(records))


def threshold_at_risk(curve: RiskCoverageCurve, max_risk: float) -> float:
    """Smallest threshold whose risk is ``<= max_risk``; ``inf`` if none qualifies."""
    ok = np.flatnonzero(curve.risk <= max_risk + RISK_ATOL)
    return float(curve.thresholds[ok[-1]]) if ok.size else math.inf


def coverage_at_risk(curve: RiskCoverageCurve, max_risk: float) -> float:
    ok = curve.risk <= max_risk + RISK_ATOL
    return float(curve.coverage[ok].max()) if ok.any() else 0.0


def auc_risk_coverage(curve: RiskCoverageCurve) -> float:
    """Trapezoidal area under risk(coverage) on (0, 1], times 100.

    Risk is held at its first observed value between coverage 0 and the
    first curve point.
    """
    c = np.concatenate(([0.0], curve.coverage))
    r = np.concatenate((curve.risk[:1], curve.risk))
    return float(100.0 * np.sum(np.diff(c) * (r[1:] + r[:-1]) / 2.0))


def cov_low_risk(curve: RiskCoverageCurve) -> float:
    """Mean of C@1% ... C@5%."""
    return float(np.mean([coverage_at_risk(curve, r) for r in LOW_RISK_LEVELS]))


def _phi(conf, acc, cost, gamma):
    answered = conf >= gamma
    scores = np.where(acc > 0, acc, -cost)
    return np.where(answered, scores, 0.0)


def effective_reliability(records: Sequence[EvalRecord], cost: float, gamma: float) -> float:
    """Mean per-sample reliability times 100: correct -> soft_acc, wrong -> -cost, abstain -> 0."""
    if len(records) == 0:
        raise ValueError("no records")
    conf, acc = _arrays(records)
    return float(100.0 * _phi(conf, acc, cost, gamma).mean())


def best_phi_threshold(records_val: Sequence[EvalRecord], cost: float) -> float:
    """Observed confidence (or ``inf``) maximizing effective reliability; ties go to the larger threshold."""
    if len(records_val) == 0:
        raise ValueError("no validation records")
    conf, acc = _arrays(records_val)
    order = np.argsort(-conf, kind="stable")
    c = conf[order]
    scores = np.where(acc[order] > 0, acc[order], -cost)
    ends = _group_ends(c)
    values = np.concatenate(([0.0], np.cumsum(scores)[ends] / c.shape[0]))
    candidates = np.concatenate(([math.inf], c[ends]))
    best = np.flatnonzero(values >= values.max() - 1e-12)[0]
    return float(candidates[best])


def _bin_index(conf: np.ndarray, num_bins: int) -> np.ndarray:
    edges = np.arange(num_bins + 1) / num_bins
    return np.minimum(np.searchsorted(edges, conf, side="right") - 1, num_bins - 1)


def ece_from_arrays(conf: np.ndarray, acc: np.ndarray, num_bins: int = DEFAULT_ECE_BINS) -> float:
    conf = np.asarray(conf, dtype=np.float64)
    acc = np.asarray(acc, dtype=np.float64)
    if num_bins < 1:
        raise ValueError("num_bins must be >= 1")
    if conf.size == 0:
        raise ValueError("no records")
    if np.any(conf < 0.0) or np.any(conf > 1.0):
        raise ValueError("ECE needs confidences in [0, 1]; rescale signed confidences first")
    idx = _bin_index(conf, num_bins)
    acc_sum = np.bincount(idx, weights=acc, minlength=num_bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=num_bins)
    return float(np.abs(acc_sum - conf_sum).sum() / conf.shape[0])


def ece(records: Sequence[EvalRecord], num_bins: int = DEFAULT_ECE_BINS, rescale: bool = False) -> float:
    """Equal-width binned expected calibration error against soft accuracy.

    ``rescale`` maps confidences from ``[-1, 1]`` to ``[0, 1]`` via
    ``(g + 1) / 2`` (for the mean-minus-std selector).
    """
    conf, acc = _arrays(records)
    if rescale:
        conf = (conf + 1.0) / 2.0
    return ece_from_arrays(conf, acc, num_bins)


def realized_at_threshold(records: Sequence[EvalRecord], gamma: float) -> tuple[float, float]:
    """``(risk, coverage)`` at ``gamma``; risk is 0.0 when nothing is answered."""
    conf, acc = _arrays(records)
    answered = conf >= gamma
    count = int(answered.sum())
    risk = float((1.0 - acc[answered]).sum() / count) if count else 0.0
    return risk, count / conf.shape[0]


def threshold_generalization(
    records_val: Sequence[EvalRecord], records_test: Sequence[EvalRecord], target_risk: float
) -> tuple[float, float, float]:
    """Pick ``gamma`` on validation for ``target_risk``; report realized test risk and coverage.

    The realized risk may exceed the target and is not clamped.
    """
    if len(records_val) == 0 or len(records_test) == 0:
        raise ValueError("both validation and test records are required")
    gamma = threshold_at_risk(build_curve(records_val), target_risk)
    risk, coverage = realized_at_threshold(records_test, gamma)
    return gamma, risk, coverage


def coverage_by_category(records: Sequence[EvalRecord], gamma: float) -> dict[str, float]:
    """Fraction answered per category present, plus ``"All"``. Absent categories are omitted."""
    out: dict[str, float] = {}
    if len(records) == 0:
        return out
    answered = [r.confidence >= gamma for r in records]
    out["All"] = sum(answered) / len(records)
    for cat in Category:
        flags = [a for a, r in zip(answered, records) if r.category is cat]
        if flags:
            out[cat.value] = sum(flags) / len(flags)
    return out


def accuracy(records: Sequence[EvalRecord]) -> float:
    return float(np.mean([r.soft_acc for r in records]))


DEFAULT_ROUTING = {
    "Acc": Selector.MEAN,
    "ECE": Selector.MEAN,
    "C@1": Selector.MEAN_MINUS_STD,
    "C@5": Selector.MEAN,
    "C@1-5": Selector.MEAN,
    "AUC": Selector.MEAN,
    "Phi10": Selector.MEAN_MINUS_STD,
    "Phi100": Selector.MEAN_MINUS_STD,
}


@dataclass
class MetricsConfig:
    metrics: tuple[str, ...] = METRIC_COLUMNS
    routing: dict[str, Selector] = field(default_factory=lambda: dict(DEFAULT_ROUTING))
    ece_bins: int = DEFAULT_ECE_BINS
    ece_rescale: bool = False
    # "val": pick Phi thresholds on validation records when given, else on the evaluated set
    phi_threshold: str = "val"

    def __post_init__(self) -> None:
        self.routing = {k: Selector(v) for k, v in self.routing.items()}
        unknown = set(self.metrics) - set(DEFAULT_ROUTING)
        if unknown:
            raise ValueError(f"unknown metrics: {sorted(unknown)}")
        if self.phi_threshold not in ("val", "test"):
            raise ValueError("phi_threshold must be 'val' or 'test'")


def route(metric: str, available: Iterable[Selector], config: MetricsConfig) -> Selector:
    """Configured selector for ``metric``, falling back to g_mean then maxprob."""
    available = [Selector(s) for s in available]
    for choice in (config.routing.get(metric, Selector.MEAN), Selector.MEAN, Selector.MAXPROB):
        if choice in available:
            return choice
    if len(available) == 1:
        return available[0]
    raise ValueError(f"no usable selector for {metric} among {available}")


_COSTS = {"Phi10": 10.0, "Phi100": 100.0}
_RISKS = {"C@1": 0.01, "C@5": 0.05}


def compute_metric(
    metric: str,
    records: Sequence[EvalRecord],
    selector: Selector,
    config: MetricsConfig,
    val_records: Sequence[EvalRecord] | None = None,
) -> float:
    """One metric value at report scale (coverage and accuracy times 100)."""
    if metric == "Acc":
        return 100.0 * accuracy(records)
    if metric == "ECE":
        if selector is Selector.MEAN_MINUS_STD and not config.ece_rescale:
            return math.nan
        return ece(records, config.ece_bins, rescale=selector is Selector.MEAN_MINUS_STD)
    if metric in _RISKS:
        return 100.0 * coverage_at_risk(build_curve(records), _RISKS[metric])
    if metric == "C@1-5":
        return 100.0 * cov_low_risk(build_curve(records))
    if metric == "AUC":
        return auc_risk_coverage(build_curve(records))
    if metric in _COSTS:
        cost = _COSTS[metric]
        if config.phi_threshold == "val" and val_records:
            gamma = best_phi_threshold(val_records, cost)
        else:
            gamma = best_phi_threshold(records, cost)
        return effective_reliability(records, cost, gamma)
    raise ValueError(f"unknown metric {metric!r}")


def evaluate(
    scored: Mapping[Selector, Sequence[EvalRecord]],
    config: MetricsConfig | None = None,
    val_scored: Mapping[Selector, Sequence[EvalRecord]] | None = None,
    selector: Selector | None = None,
) -> dict[str, float]:
    """Evaluate ``config.metrics``; routed per metric unless ``selector`` pins one."""
    config = config or MetricsConfig()
    out = {}
    for metric in config.metrics:
        sel = Selector(selector) if selector is not None else route(metric, scored, config)
        val = val_scored.get(sel) if val_scored else None
        out[metric] = compute_metric(metric, scored[sel], sel, config, val)
    return out
