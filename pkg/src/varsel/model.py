"""Small softmax MLP over a flat weight vector, plus a synthetic multi-annotator task."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

NUM_ANNOTATIONS = 10
_SOFT_ACC = (0.0, 0.3, 0.6, 0.9, 1.0)


class Category(str, Enum):
    BINARY = "Binary"
    NUMBER = "Number"
    OTHER = "Other"


class Domain(str, Enum):
    ID = "ID"
    OOD = "OOD"


@dataclass(frozen=True)
class ClassifierSpec:
    input_dim: int
    hidden_dims: tuple[int, ...] = (64,)
    num_classes: int = 8
    dropout_rate: float = 0.0
    activation: str = "relu"

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ValueError("layer sizes must be positive")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.num_classes)

    @property
    def n_params(self) -> int:
        sizes = self.layer_sizes
        return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))

    def unpack(self, weights: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Split a flat vector into ``(W, b)`` views, ``W`` of shape ``(fan_in, fan_out)``."""
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (self.n_params,):
            raise ValueError(f"weights have shape {weights.shape}, expected ({self.n_params},)")
        layers = []
        offset = 0
        sizes = self.layer_sizes
        for a, b in zip(sizes[:-1], sizes[1:]):
            w = weights[offset : offset + a * b].reshape(a, b)
            offset += a * b
            layers.append((w, weights[offset : offset + b]))
            offset += b
        return layers


def init_weights(spec: ClassifierSpec, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    parts = []
    sizes = spec.layer_sizes
    for a, b in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (a + b))
        parts.append(rng.uniform(-limit, limit, a * b))
        parts.append(np.zeros(b))
    return np.concatenate(parts)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _activate(spec: ClassifierSpec, a: np.ndarray) -> np.ndarray:
    return np.maximum(a, 0.0) if spec.activation == "relu" else np.tanh(a)


def _activate_grad(spec: ClassifierSpec, a: np.ndarray, out: np.ndarray) -> np.ndarray:
    return (a > 0).astype(np.float64) if spec.activation == "relu" else 1.0 - out**2


def _as_batch(spec: ClassifierSpec, features: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"features have shape {np.shape(features)}, expected (..., {spec.input_dim})")
    return x, single


def _dropout_masks(spec, rng, rate, batch):
    if rng is None or rate == 0.0:
        return None
    if not 0.0 < rate < 1.0:
        raise ValueError(f"dropout rate must lie in (0, 1), got {rate}")
    # inverted dropout: kept units are rescaled so the expectation is unchanged
    return [(rng.random((batch, h)) >= rate) / (1.0 - rate) for h in spec.hidden_dims]


def forward(
    weights: np.ndarray,
    spec: ClassifierSpec,
    features: np.ndarray,
    dropout_rng: np.random.Generator | None = None,
    dropout_rate: float | None = None,
) -> np.ndarray:
    """Class probabilities for one feature vector ``(d,)`` or a batch ``(B, d)``.

    Dropout (after each hidden activation) is active only when ``dropout_rng``
    is given; the rate defaults to ``spec.dropout_rate``.
    """
    layers = spec.unpack(weights)
    x, single = _as_batch(spec, features)
    rate = spec.dropout_rate if dropout_rate is None else dropout_rate
    masks = _dropout_masks(spec, dropout_rng, rate, x.shape[0])
    h = x
    for i, (w, b) in enumerate(layers[:-1]):
        h = _activate(spec, h @ w + b)
        if masks is not None:
            h = h * masks[i]
    w, b = layers[-1]
    p = softmax(h @ w + b)
    return p[0] if single else p


def batch_loss_and_grad(
    weights: np.ndarray,
    spec: ClassifierSpec,
    features: np.ndarray,
    targets: np.ndarray,
    dropout_rng: np.random.Generator | None = None,
) -> tuple[float, np.ndarray]:
    """Mean soft-label cross-entropy and its gradient; ``targets`` rows are distributions."""
    layers = spec.unpack(weights)
    x, _ = _as_batch(spec, features)
    t = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if t.shape != (n, spec.num_classes):
        raise ValueError(f"targets have shape {t.shape}, expected ({n}, {spec.num_classes})")
    masks = _dropout_masks(spec, dropout_rng, spec.dropout_rate, n)

    pre, post = [], [x]
    h = x
    for i, (w, b) in enumerate(layers[:-1]):
        a = h @ w + b
        out = _activate(spec, a)
        pre.append((a, out))
        h = out if masks is None else out * masks[i]
        post.append(h)
    w, b = layers[-1]
    logits = h @ w + b
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    loss = float(-(t * log_p).sum() / n)

    grads: list[np.ndarray] = []
    delta = (np.exp(log_p) * t.sum(axis=1, keepdims=True) - t) / n
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        grads.append(delta.sum(axis=0))
        grads.append((post[i].T @ delta).ravel())
        if i > 0:
            back = delta @ w.T
            if masks is not None:
                back = back * masks[i - 1]
            a, out = pre[i - 1]
            delta = back * _activate_grad(spec, a, out)
    grads.reverse()
    return loss, np.concatenate(grads)


@dataclass
class Sample:
    id: str
    features: np.ndarray
    annotations: tuple[int, ...]
    category: Category = Category.OTHER
    domain: Domain = Domain.ID
    label: int | None = None

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.annotations = tuple(int(a) for a in self.annotations)
        if len(self.annotations) != NUM_ANNOTATIONS:
            raise ValueError(f"sample {self.id}: expected {NUM_ANNOTATIONS} annotations, got {len(self.annotations)}")
        self.category = Category(self.category)
        self.domain = Domain(self.domain)


@dataclass
class Dataset:
    samples: list[Sample]
    split: str = "test"
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.split not in ("train", "val", "test"):
            raise ValueError(f"unknown split {self.split!r}")
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ValueError("sample ids must be unique within a dataset")

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def features(self) -> np.ndarray:
        if "x" not in self._cache:
            self._cache["x"] = np.stack([s.features for s in self.samples])
        return self._cache["x"]

    @property
    def annotations(self) -> np.ndarray:
        if "a" not in self._cache:
            self._cache["a"] = np.array([s.annotations for s in self.samples], dtype=np.int64)
        return self._cache["a"]

    def targets(self, num_classes: int) -> np.ndarray:
        """Annotation histograms, one row per sample, rows summing to 1."""
        return annotation_histograms(self.annotations, num_classes)


def annotation_histograms(annotations: np.ndarray, num_classes: int) -> np.ndarray:
    annotations = np.atleast_2d(annotations)
    counts = np.zeros((annotations.shape[0], num_classes))
    rows = np.repeat(np.arange(annotations.shape[0]), annotations.shape[1])
    np.add.at(counts, (rows, annotations.ravel()), 1.0)
    return counts / annotations.shape[1]


def loss_and_grad(
    weights: np.ndarray,
    spec: ClassifierSpec,
    batch: Sequence[Sample] | Dataset,
    dropout_rng: np.random.Generator | None = None,
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy against each sample's annotation histogram."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    if isinstance(batch, Dataset):
        x, ann = batch.features, batch.annotations
    else:
        x = np.stack([s.features for s in batch])
        ann = np.array([s.annotations for s in batch], dtype=np.int64)
    return batch_loss_and_grad(weights, spec, x, annotation_histograms(ann, spec.num_classes), dropout_rng)


def soft_accuracy(predicted: int, annotations: Sequence[int]) -> float:
    """VQA accuracy: ``min(1, 0.3 * matches)`` from exactly ten annotator answers."""
    if len(annotations) != NUM_ANNOTATIONS:
        raise ValueError(f"expected {NUM_ANNOTATIONS} annotations, got {len(annotations)}")
    matches = sum(1 for a in annotations if a == predicted)
    return _SOFT_ACC[min(matches, 4)]


def soft_accuracy_batch(predicted: np.ndarray, annotations: np.ndarray) -> np.ndarray:
    annotations = np.atleast_2d(annotations)
    if annotations.shape[1] != NUM_ANNOTATIONS:
        raise ValueError(f"expected {NUM_ANNOTATIONS} annotations per sample")
    matches = (annotations == np.asarray(predicted)[:, None]).sum(axis=1)
    return np.asarray(_SOFT_ACC)[np.minimum(matches, 4)]


@dataclass(frozen=True)
class TaskSpec:
    """Class-conditional Gaussian clusters with ten noisy annotators per sample.

    OOD test points shrink the class means toward a common offset by
    ``ood_shift``, widen the within-class spread, and inflate annotator noise.
    Every transform is the identity at ``ood_shift = 0``.
    """

    num_classes: int = 8
    input_dim: int = 16
    n_train: int = 4000
    n_val: int = 1000
    n_test: int = 2000
    n_ood: int | None = None
    annotator_noise: float = 0.2
    ood_shift: float = 0.0
    category_mix: tuple[float, float, float] = (0.38, 0.13, 0.49)
    cluster_scale: float = 1.0
    # each class is a uniform mixture of this many Gaussian blobs
    clusters_per_class: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "category_mix", tuple(float(p) for p in self.category_mix))
        mix = np.asarray(self.category_mix)
        if mix.shape != (3,) or np.any(mix < 0) or abs(mix.sum() - 1.0) > 1e-9:
            raise ValueError(f"category_mix must be 3 probabilities summing to 1, got {self.category_mix}")
        if not 0.0 <= self.annotator_noise <= 1.0:
            raise ValueError("annotator_noise must lie in [0, 1]")
        if self.ood_shift < 0:
            raise ValueError("ood_shift must be >= 0")
        if min(self.n_train, self.n_val, self.n_test, self.n_ood_eff) < 1:
            raise ValueError("split sizes must be >= 1")
        if self.clusters_per_class < 1:
            raise ValueError("clusters_per_class must be >= 1")
        if self.num_classes < 2 or self.input_dim < 1:
            raise ValueError("need num_classes >= 2 and input_dim >= 1")

    @property
    def n_ood_eff(self) -> int:
        return self.n_test if self.n_ood is None else self.n_ood


def _annotate(rng, labels, num_classes, noise):
    n = labels.shape[0]
    flip = rng.random((n, NUM_ANNOTATIONS)) < noise
    other = (labels[:, None] + rng.integers(1, num_classes, (n, NUM_ANNOTATIONS))) % num_classes
    return np.where(flip, other, labels[:, None])


def gen_synthetic_task(spec: TaskSpec, seed: int) -> tuple[Dataset, Dataset, Dataset, Dataset]:
    """Return ``(train, val, test, ood_test)``; deterministic in ``seed``."""
    root = np.random.SeedSequence(seed)
    geometry, *split_seeds = root.spawn(5)
    g = np.random.default_rng(geometry)
    means = g.normal(0.0, spec.cluster_scale, (spec.num_classes, spec.clusters_per_class, spec.input_dim))
    offset = g.normal(0.0, spec.cluster_scale, spec.input_dim)
    categories = list(Category)

    def make(n, split, tag, seed_seq, ood):
        rng = np.random.default_rng(seed_seq)
        labels = rng.integers(0, spec.num_classes, n)
        noise = rng.standard_normal((n, spec.input_dim))
        blobs = rng.integers(0, spec.clusters_per_class, n) if spec.clusters_per_class > 1 else np.zeros(n, dtype=np.int64)
        centers = means[labels, blobs]
        spread = 1.0
        label_noise = spec.annotator_noise
        if ood:
            s = spec.ood_shift
            shrink = 1.0 / (1.0 + s)
            centers = shrink * centers + (1.0 - shrink) * offset
            spread = 1.0 + s
            label_noise = min(1.0, spec.annotator_noise * (1.0 + s))
        x = centers + spread * noise
        ann = _annotate(rng, labels, spec.num_classes, label_noise)
        cats = rng.choice(3, size=n, p=spec.category_mix)
        domain = Domain.OOD if ood else Domain.ID
        samples = [
            Sample(
                id=f"{tag}-{i:06d}",
                features=x[i],
                annotations=tuple(ann[i]),
                category=categories[cats[i]],
                domain=domain,
                label=int(labels[i]),
            )
            for i in range(n)
        ]
        return Dataset(samples, split=split)

    return (
        make(spec.n_train, "train", "train", split_seeds[0], False),
        make(spec.n_val, "val", "val", split_seeds[1], False),
        make(spec.n_test, "test", "test", split_seeds[2], False),
        make(spec.n_ood_eff, "test", "ood", split_seeds[3], True),
    )
