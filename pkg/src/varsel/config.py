"""Serializable run configuration and its one-to-one command-line flags.

Every leaf field of :class:`RunConfig` is exposed as ``--<section>.<field>``
(e.g. ``--task.n_train 4000``, ``--ivon.lr 0.1``, ``--eval.mc_grid 1,8,64``).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .inference import DEFAULT_TEST_SAMPLES
from .metrics import DEFAULT_ECE_BINS, METRIC_COLUMNS
from .mixture import DEFAULT_ALPHAS, MAX_BALANCED
from .model import ClassifierSpec, TaskSpec
from .posterior import IvonHyper
from .training import AdamWHyper, TrainConfig

DEFAULT_MC_GRID = (1, 2, 4, 8, 16, 32, 64)


@dataclass(frozen=True)
class ModelConfig:
    hidden_dims: tuple[int, ...] = (64,)
    dropout_rate: float = 0.0
    activation: str = "relu"

    def spec(self, task: TaskSpec) -> ClassifierSpec:
        return ClassifierSpec(
            input_dim=task.input_dim,
            hidden_dims=self.hidden_dims,
            num_classes=task.num_classes,
            dropout_rate=self.dropout_rate,
            activation=self.activation,
        )


@dataclass(frozen=True)
class EvalConfig:
    test_samples: int = DEFAULT_TEST_SAMPLES
    # 0 disables the MC-dropout inference mode
    mc_dropout_rate: float = 0.0
    metrics: tuple[str, ...] = METRIC_COLUMNS
    ece_bins: int = DEFAULT_ECE_BINS
    ece_rescale: bool = False
    phi_threshold: str = "val"
    alphas: tuple[float, ...] = (0.0,)
    mixture_size: str = MAX_BALANCED
    mc_grid: tuple[int, ...] = DEFAULT_MC_GRID
    sweep_alphas: tuple[float, ...] = DEFAULT_ALPHAS
    curves: bool = True

    def __post_init__(self) -> None:
        if self.test_samples < 2:
            raise ValueError("eval.test_samples must be >= 2")
        if not 0.0 <= self.mc_dropout_rate < 1.0:
            raise ValueError("eval.mc_dropout_rate must lie in [0, 1)")
        if any(n < 1 for n in self.mc_grid):
            raise ValueError("eval.mc_grid entries must be >= 1")
        if any(not 0.0 <= a <= 1.0 for a in (*self.alphas, *self.sweep_alphas)):
            raise ValueError("alphas must lie in [0, 1]")


@dataclass(frozen=True)
class RunConfig:
    task: TaskSpec = field(default_factory=TaskSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ivon: IvonHyper = field(default_factory=IvonHyper)
    adamw: AdamWHyper = field(default_factory=AdamWHyper)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seeds: tuple[int, ...] = (0,)
    output_dir: str = ""

    @property
    def classifier(self) -> ClassifierSpec:
        return self.model.spec(self.task)

    def to_dict(self) -> dict:
        return _jsonable(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _build(cls, data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    return obj


def _hints(cls) -> dict[str, Any]:
    return typing.get_type_hints(cls)


def _is_dataclass_type(tp) -> bool:
    return isinstance(tp, type) and dataclasses.is_dataclass(tp)


def _convert(tp, value):
    """Coerce a JSON value to the annotated field type."""
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        errors = []
        for arg in args:
            if arg is type(None):
                continue
            try:
                return _convert(arg, value)
            except (TypeError, ValueError) as exc:
                errors.append(str(exc))
        raise ValueError(f"cannot interpret {value!r} as {tp}: {'; '.join(errors)}")
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise TypeError(f"expected a list, got {value!r}")
        elem = args[0]
        return tuple(_convert(elem, v) for v in value)
    if _is_dataclass_type(tp):
        return _build(tp, value)
    if tp is float:
        if value in ("inf", "-inf"):
            return float(value)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise TypeError(f"expected an integer, got {value!r}")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise TypeError(f"expected true/false, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise TypeError(f"expected a string, got {value!r}")
        return value
    return value


def _build(cls, data: dict):
    if not isinstance(data, dict):
        raise TypeError(f"expected an object for {cls.__name__}, got {data!r}")
    hints = _hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**{k: _convert(hints[k], v) for k, v in data.items()})


# ---------------------------------------------------------------- flags


def _parse_scalar(tp, text: str):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        if text.lower() == "none" and type(None) in typing.get_args(tp):
            return None
        for arg in typing.get_args(tp):
            if arg is type(None):
                continue
            try:
                return _parse_scalar(arg, text)
            except ValueError:
                continue
        raise ValueError(f"cannot parse {text!r}")
    if origin is tuple:
        elem = typing.get_args(tp)[0]
        return [_parse_scalar(elem, t.strip()) for t in text.split(",") if t.strip()]
    if tp is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if tp is int:
        return int(text)
    if tp is float:
        return float(text)
    return text


def leaf_fields(cls=RunConfig, prefix: str = ""):
    """Yield ``(dotted_name, type)`` for every non-dataclass field."""
    hints = _hints(cls)
    for f in dataclasses.fields(cls):
        tp = hints[f.name]
        name = f"{prefix}{f.name}"
        if _is_dataclass_type(tp):
            yield from leaf_fields(tp, name + ".")
        else:
            yield name, tp


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("run configuration (one flag per field)")
    for name, tp in leaf_fields():
        group.add_argument(f"--{name}", dest=f"cfg:{name}", default=None, metavar=_metavar(tp))


def _metavar(tp) -> str:
    if typing.get_origin(tp) is tuple:
        return "A,B,..."
    return getattr(tp, "__name__", "VALUE").upper()


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Load ``--config`` (if any) and apply per-field flag overrides."""
    data = RunConfig().to_dict()
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            _merge(data, json.load(fh))
    types_by_name = dict(leaf_fields())
    for key, text in vars(args).items():
        if not key.startswith("cfg:") or text is None:
            continue
        name = key[4:]
        try:
            value = _parse_scalar(types_by_name[name], text)
        except ValueError as exc:
            raise ValueError(f"--{name}: {exc}") from None
        node = data
        *parents, leaf = name.split(".")
        for p in parents:
            node = node[p]
        node[leaf] = value
    return RunConfig.from_dict(data)


def explicit_fields(args: argparse.Namespace) -> set[str]:
    """Dotted names set by ``--config`` or a flag (as opposed to defaults)."""
    names = {key[4:] for key, text in vars(args).items() if key.startswith("cfg:") and text is not None}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            names |= set(_dotted(json.load(fh)))
    return names


def _dotted(data: dict, prefix: str = ""):
    for k, v in data.items():
        if isinstance(v, dict):
            yield from _dotted(v, f"{prefix}{k}.")
        else:
            yield f"{prefix}{k}"


def _merge(base: dict, override: dict) -> None:
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _merge(base[k], v)
        else:
            base[k] = v
