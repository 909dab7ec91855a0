"""Prediction logs, dataset files and posterior checkpoints.

All formats are line-delimited JSON with a versioned header; floats are
written with ``repr`` precision so round-trips are bit-exact. Field-by-field
layouts are in ``docs/formats.md``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .inference import PredictiveSummary, summarize
from .metrics import EvalRecord
from .model import NUM_ANNOTATIONS, Category, ClassifierSpec, Dataset, Domain, Sample, soft_accuracy, soft_accuracy_batch
from .posterior import IvonHyper, Posterior
from .selection import Selector, g_maxprob, g_mean, g_mean_minus_std, g_projection

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SIMPLEX_ATOL = 1e-6
RAW_SAMPLE_WARN_FLOATS = 10**7
LOG_KIND = "prediction_log"
DATASET_KIND = "dataset"
CHECKPOINT_KIND = "checkpoint"


class FormatError(ValueError):
    """Malformed or unsupported file content."""


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write via a temporary file in the target directory and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dumps(obj: Any) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def _header(kind: str, **extra) -> str:
    return _dumps({"kind": kind, "schema_version": SCHEMA_VERSION, **extra})


def _read_lines(path: str | os.PathLike, kind: str) -> tuple[dict, list[tuple[int, dict]]]:
    with open(path, encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    if not raw:
        raise FormatError(f"{path}: empty file")
    try:
        header = json.loads(raw[0])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line 1: header is not valid JSON ({exc.msg})") from None
    if not isinstance(header, dict) or header.get("kind") != kind:
        raise FormatError(f"{path}: line 1: expected a {kind!r} header")
    version = header.get("schema_version")
    if version != SCHEMA_VERSION:
        raise FormatError(f"{path}: unsupported schema version {version!r} (this reader handles {SCHEMA_VERSION})")
    rows = []
    for lineno, line in enumerate(raw[1:], start=2):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(row, dict):
            raise FormatError(f"{path}: line {lineno}: expected an object")
        rows.append((lineno, row))
    return header, rows


def _field(row: dict, name: str, where: str):
    if name not in row:
        raise FormatError(f"{where}: missing field {name!r}")
    return row[name]


# ---------------------------------------------------------------- prediction logs


@dataclass
class LogEntry:
    """One evaluated input. Exactly one of ``samples`` (N x C), ``summary`` or
    ``probs`` (C,) is set, and exactly one of ``annotations`` or ``soft_acc``."""

    id: str
    category: Category = Category.OTHER
    domain: Domain = Domain.ID
    annotations: tuple[int, ...] | None = None
    soft_acc: float | None = None
    samples: np.ndarray | None = None
    summary: PredictiveSummary | None = None
    probs: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.category = Category(self.category)
        self.domain = Domain(self.domain)
        if (self.annotations is None) == (self.soft_acc is None):
            raise ValueError(f"entry {self.id}: give exactly one of annotations or soft_acc")
        if self.annotations is not None:
            self.annotations = tuple(int(a) for a in self.annotations)
            if len(self.annotations) != NUM_ANNOTATIONS:
                raise ValueError(f"entry {self.id}: expected {NUM_ANNOTATIONS} annotations")
        shapes = [x is not None for x in (self.samples, self.summary, self.probs)]
        if sum(shapes) != 1:
            raise ValueError(f"entry {self.id}: give exactly one of samples, summary or probs")
        if self.samples is not None:
            self.samples = np.asarray(self.samples, dtype=np.float64)
            if self.samples.ndim != 2 or self.samples.shape[0] < 1:
                raise ValueError(f"entry {self.id}: samples must be an N x C matrix")
            _check_simplex(self.samples, self.id)
        elif self.probs is not None:
            self.probs = np.asarray(self.probs, dtype=np.float64)
            if self.probs.ndim != 1:
                raise ValueError(f"entry {self.id}: probs must be a vector")
            _check_simplex(self.probs, self.id)
        else:
            _check_simplex(self.summary.mu, self.id)

    @property
    def shape_kind(self) -> str:
        if self.samples is not None:
            return "samples"
        return "summary" if self.summary is not None else "probs"

    def to_json(self) -> dict:
        out: dict[str, Any] = {"id": self.id, "category": self.category.value, "domain": self.domain.value}
        if self.annotations is not None:
            out["annotations"] = list(self.annotations)
        else:
            out["soft_acc"] = self.soft_acc
        if self.samples is not None:
            out["samples"] = self.samples.tolist()
        elif self.summary is not None:
            out["summary"] = {
                "mu": self.summary.mu.tolist(),
                "sigma": self.summary.sigma.tolist(),
                "n_samples": self.summary.n_samples,
            }
        else:
            out["probs"] = self.probs.tolist()
        return out


def _check_simplex(p: np.ndarray, entry_id: str) -> None:
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError(f"entry {entry_id}: probabilities must be finite and non-negative")
    sums = np.atleast_1d(p.sum(axis=-1))
    if np.any(np.abs(sums - 1.0) > SIMPLEX_ATOL):
        raise ValueError(f"entry {entry_id}: probabilities sum to {float(sums[0]):.6g}, not 1 (tolerance {SIMPLEX_ATOL})")


@dataclass
class PredictionLog:
    entries: list[LogEntry] = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    def __len__(self) -> int:
        return len(self.entries)


def serialize_log(entries: Sequence[LogEntry]) -> str:
    lines = [_header(LOG_KIND)]
    lines.extend(_dumps(e.to_json()) for e in entries)
    return "\n".join(lines) + "\n"


def write_log(entries: PredictionLog | Sequence[LogEntry], path: str | os.PathLike) -> None:
    if isinstance(entries, PredictionLog):
        entries = entries.entries
    raw = sum(e.samples.size for e in entries if e.samples is not None)
    if raw > RAW_SAMPLE_WARN_FLOATS:
        log.warning("prediction log %s stores %d raw sample floats; consider summaries instead", path, raw)
    atomic_write_text(path, serialize_log(entries))


def _entry_from_json(row: dict, where: str) -> LogEntry:
    entry_id = str(_field(row, "id", where))
    where = f"{where} (id {entry_id})"
    kwargs: dict[str, Any] = {"id": entry_id}
    try:
        kwargs["category"] = Category(_field(row, "category", where))
        kwargs["domain"] = Domain(_field(row, "domain", where))
    except ValueError as exc:
        raise FormatError(f"{where}: {exc}") from None
    if "annotations" in row:
        kwargs["annotations"] = row["annotations"]
    if "soft_acc" in row:
        kwargs["soft_acc"] = float(row["soft_acc"])
    if "samples" in row:
        kwargs["samples"] = row["samples"]
    if "summary" in row:
        s = row["summary"]
        try:
            kwargs["summary"] = PredictiveSummary(
                np.asarray(s["mu"], dtype=np.float64), np.asarray(s["sigma"], dtype=np.float64), int(s["n_samples"])
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{where}: field 'summary': {exc}") from None
    if "probs" in row:
        kwargs["probs"] = row["probs"]
    try:
        return LogEntry(**kwargs)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{where}: {exc}") from None


def read_log(path: str | os.PathLike) -> PredictionLog:
    _, rows = _read_lines(path, LOG_KIND)
    entries = [_entry_from_json(row, f"{path}: line {lineno}") for lineno, row in rows]
    ids = [e.id for e in entries]
    if len(set(ids)) != len(ids):
        raise FormatError(f"{path}: duplicate entry ids")
    return PredictionLog(entries)


_SCORERS = {
    Selector.MEAN: g_mean,
    Selector.MEAN_MINUS_STD: g_mean_minus_std,
    Selector.PROJECTION: g_projection,
}


def _score_entry(entry: LogEntry, selector: Selector):
    if entry.probs is not None:
        if selector is not Selector.MAXPROB:
            raise ValueError(f"entry {entry.id}: selector {selector.value!r} needs samples or a summary")
        return g_maxprob(entry.probs)
    summary = entry.summary if entry.summary is not None else summarize(entry.samples)
    if selector is Selector.MAXPROB:
        # maxprob on a sampled entry scores its mean distribution
        return g_maxprob(summary.mu)
    if selector is not Selector.MEAN and summary.n_samples < 2:
        raise ValueError(f"entry {entry.id}: selector {selector.value!r} needs at least 2 samples")
    return _SCORERS[selector](summary)


def log_to_records(log_: PredictionLog | Sequence[LogEntry], selector: Selector | str) -> list[EvalRecord]:
    """Score every entry with ``selector``, preserving order."""
    selector = Selector(selector)
    entries = log_.entries if isinstance(log_, PredictionLog) else log_
    records = []
    for e in entries:
        scored = _score_entry(e, selector)
        acc = soft_accuracy(scored.predicted_class, e.annotations) if e.annotations is not None else e.soft_acc
        records.append(EvalRecord(e.id, scored.confidence, acc, scored.predicted_class, e.category, e.domain))
    return records


def entries_from_predictions(
    dataset: Dataset, source: PredictiveSummary | np.ndarray, *, keep_samples: bool = False
) -> list[LogEntry]:
    """Log entries for model outputs on ``dataset``: a batched summary or a ``(B, C)`` matrix."""
    entries = []
    for i, s in enumerate(dataset.samples):
        common = dict(id=s.id, category=s.category, domain=s.domain, annotations=s.annotations)
        if isinstance(source, PredictiveSummary):
            if keep_samples and source.samples is not None:
                entries.append(LogEntry(samples=source.samples[:, i, :], **common))
            else:
                entries.append(LogEntry(summary=source.row(i), **common))
        else:
            entries.append(LogEntry(probs=np.asarray(source[i]), **common))
    return entries


# ---------------------------------------------------------------- datasets


def serialize_dataset(dataset: Dataset) -> str:
    lines = [_header(DATASET_KIND, split=dataset.split)]
    for s in dataset.samples:
        row = {
            "id": s.id,
            "features": s.features.tolist(),
            "annotations": list(s.annotations),
            "category": s.category.value,
            "domain": s.domain.value,
        }
        if s.label is not None:
            row["label"] = int(s.label)
        lines.append(_dumps(row))
    return "\n".join(lines) + "\n"


def write_dataset(dataset: Dataset, path: str | os.PathLike) -> None:
    atomic_write_text(path, serialize_dataset(dataset))


def read_dataset(path: str | os.PathLike) -> Dataset:
    header, rows = _read_lines(path, DATASET_KIND)
    samples = []
    for lineno, row in rows:
        where = f"{path}: line {lineno}"
        try:
            samples.append(
                Sample(
                    id=str(_field(row, "id", where)),
                    features=np.asarray(_field(row, "features", where), dtype=np.float64),
                    annotations=tuple(_field(row, "annotations", where)),
                    category=_field(row, "category", where),
                    domain=_field(row, "domain", where),
                    label=row.get("label"),
                )
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"{where}: {exc}") from None
    try:
        return Dataset(samples, split=header.get("split", "test"))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


# ---------------------------------------------------------------- checkpoints


def _float_out(x: float) -> float | str:
    return "inf" if math.isinf(x) else float(x)


def _float_in(x) -> float:
    return math.inf if x == "inf" else float(x)


@dataclass
class Checkpoint:
    posterior: Posterior
    model: ClassifierSpec | None = None
    optimizer: str = "ivon"
    hyper: dict | None = None
    meta: dict = field(default_factory=dict)


def _spec_to_json(spec: ClassifierSpec) -> dict:
    return {
        "input_dim": spec.input_dim,
        "hidden_dims": list(spec.hidden_dims),
        "num_classes": spec.num_classes,
        "dropout_rate": spec.dropout_rate,
        "activation": spec.activation,
    }


def _spec_from_json(d: dict) -> ClassifierSpec:
    return ClassifierSpec(
        input_dim=int(d["input_dim"]),
        hidden_dims=tuple(int(h) for h in d["hidden_dims"]),
        num_classes=int(d["num_classes"]),
        dropout_rate=float(d["dropout_rate"]),
        activation=str(d["activation"]),
    )


def hyper_to_json(hyper: IvonHyper | dict | None) -> dict | None:
    if hyper is None:
        return None
    items = hyper.items() if isinstance(hyper, dict) else vars(hyper).items()
    return {k: _float_out(v) if isinstance(v, float) else v for k, v in items}


def serialize_checkpoint(ckpt: Checkpoint) -> str:
    post = ckpt.posterior
    body = {
        "dim": post.dim,
        "lam": _float_out(post.lam),
        "weight_decay": post.weight_decay,
        "step_count": post.step_count,
        "optimizer": ckpt.optimizer,
        "model": _spec_to_json(ckpt.model) if ckpt.model is not None else None,
        "hyper": hyper_to_json(ckpt.hyper),
        "meta": ckpt.meta,
        "mean": post.mean.tolist(),
        "hess": post.hess.tolist(),
    }
    return _header(CHECKPOINT_KIND) + "\n" + _dumps(body) + "\n"


def write_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    atomic_write_text(path, serialize_checkpoint(ckpt))


def read_checkpoint(path: str | os.PathLike) -> Checkpoint:
    _, rows = _read_lines(path, CHECKPOINT_KIND)
    if len(rows) != 1:
        raise FormatError(f"{path}: expected exactly one checkpoint body line, found {len(rows)}")
    lineno, body = rows[0]
    where = f"{path}: line {lineno}"
    try:
        mean = np.asarray(_field(body, "mean", where), dtype=np.float64)
        hess = np.asarray(_field(body, "hess", where), dtype=np.float64)
        if mean.shape != (int(_field(body, "dim", where)),):
            raise FormatError(f"{where}: field 'mean' does not match 'dim'")
        post = Posterior(
            mean=mean,
            hess=hess,
            lam=_float_in(_field(body, "lam", where)),
            weight_decay=float(_field(body, "weight_decay", where)),
            step_count=int(_field(body, "step_count", where)),
        )
        model = body.get("model")
        hyper = body.get("hyper")
        return Checkpoint(
            posterior=post,
            model=_spec_from_json(model) if model is not None else None,
            optimizer=str(body.get("optimizer", "ivon")),
            hyper={k: _float_in(v) if v == "inf" else v for k, v in hyper.items()} if hyper is not None else None,
            meta=dict(body.get("meta") or {}),
        )
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{where}: {exc}") from None


def write_json(obj: Any, path: str | os.PathLike) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def write_csv(rows: Iterable[dict], columns: Sequence[str], path: str | os.PathLike) -> None:
    """Deterministic CSV: fixed column order, floats via ``repr``."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c, "")) for c in columns])
    atomic_write_text(path, buf.getvalue())


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def records_from_scores(dataset: Dataset, predicted: np.ndarray, confidence: np.ndarray) -> list[EvalRecord]:
    """EvalRecords for batch selector output on ``dataset`` (soft accuracy from its annotations)."""
    predicted = np.asarray(predicted)
    confidence = np.asarray(confidence, dtype=np.float64)
    if predicted.shape != (len(dataset),) or confidence.shape != (len(dataset),):
        raise ValueError("predicted and confidence must have one entry per sample")
    acc = soft_accuracy_batch(predicted, dataset.annotations)
    return [
        EvalRecord(s.id, float(c), float(a), int(k), s.category, s.domain)
        for s, k, c, a in zip(dataset.samples, predicted, confidence, acc)
    ]
