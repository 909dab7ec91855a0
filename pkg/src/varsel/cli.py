"""``varsel`` command-line driver: gen-data, train, eval, sweep, mix.

Outputs go to ``--output_dir`` (or ``$VARSEL_OUTPUT_ROOT/<command>``, or
``./runs/<command>``). Every command writes its resolved ``config.json``.
Failures print one JSON object ``{"error", "message"}`` to stderr and exit
nonzero (2: bad input, 3: training diverged, 1: anything else).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from . import pipeline
from .config import RunConfig, add_config_flags, explicit_fields, resolve_config
from .evalio import (
    FormatError,
    PredictionLog,
    atomic_write_text,
    entries_from_predictions,
    log_to_records,
    read_checkpoint,
    read_dataset,
    read_log,
    write_checkpoint,
    write_csv,
    write_dataset,
    write_json,
    write_log,
)
from .mixture import MixtureSpec, mix_indices
from .model import Dataset
from .selection import Selector
from .training import TrainingDiverged

log = logging.getLogger("varsel")

OUTPUT_ROOT_ENV = "VARSEL_OUTPUT_ROOT"
SPLITS = ("train", "val", "test", "ood")


def output_dir(cfg: RunConfig, command: str) -> Path:
    if cfg.output_dir:
        return Path(cfg.output_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    return Path(root or "runs") / command


def _write_config(cfg: RunConfig, out: Path) -> None:
    atomic_write_text(out / "config.json", cfg.to_json())


def _load_splits(cfg: RunConfig, seed: int, data_dir: str | None) -> dict[str, Dataset]:
    if data_dir:
        base = Path(data_dir) / f"seed{seed}"
        return {s: read_dataset(base / f"{s}.jsonl") for s in SPLITS if (base / f"{s}.jsonl").exists()}
    return dict(zip(SPLITS, pipeline.seed_datasets(cfg, seed)))


# ---------------------------------------------------------------- commands


def cmd_gen_data(cfg: RunConfig, args) -> dict:
    out = output_dir(cfg, "gen-data")
    for seed in cfg.seeds:
        for name, ds in zip(SPLITS, pipeline.seed_datasets(cfg, seed)):
            write_dataset(ds, out / f"seed{seed}" / f"{name}.jsonl")
    _write_config(cfg, out)
    return {"output_dir": str(out), "seeds": list(cfg.seeds)}


def cmd_train(cfg: RunConfig, args) -> dict:
    out = output_dir(cfg, "train")
    summary = {}
    for seed in cfg.seeds:
        splits = _load_splits(cfg, seed, args.data_dir)
        result = pipeline.train_seed(cfg, seed, splits["train"], splits.get("val"))
        write_checkpoint(pipeline.checkpoint_from(result, cfg, seed), out / f"seed{seed}" / "checkpoint.json")
        trace = "".join(json.dumps(row, sort_keys=True) + "\n" for row in result.trace)
        atomic_write_text(out / f"seed{seed}" / "trace.jsonl", trace)
        summary[str(seed)] = {"best_epoch": result.best_epoch, "epochs": len(result.trace)}
    _write_config(cfg, out)
    return {"output_dir": str(out), "optimizer": cfg.train.optimizer, "seeds": summary}


def _checkpoint_inputs(cfg: RunConfig, args):
    if not args.checkpoint:
        raise ValueError("give --checkpoint (one or more) or --log")
    for path in args.checkpoint:
        ckpt = read_checkpoint(path)
        seed = int(ckpt.meta.get("seed", cfg.seeds[0]))
        stored = ckpt.meta.get("config")
        task_cfg = cfg
        if stored:
            # the checkpoint's task, except fields given explicitly for this run
            task = dict(stored["task"])
            given = {name[5:] for name in explicit_fields(args) if name.startswith("task.")}
            task.update({k: v for k, v in cfg.to_dict()["task"].items() if k in given})
            task_cfg = RunConfig.from_dict({**cfg.to_dict(), "task": task})
        splits = _load_splits(task_cfg, seed, args.data_dir)
        yield ckpt, seed, splits


def _write_report(out: Path, cfg: RunConfig, wide, long, curves, timing, stem: str) -> None:
    mcfg = pipeline.metrics_config(cfg)
    write_csv(wide, pipeline.wide_columns(mcfg), out / f"{stem}.csv")
    write_csv(long, pipeline.LONG_KEYS, out / f"{stem}_long.csv")
    if curves:
        write_csv(curves, pipeline.CURVE_KEYS, out / "curves.csv")
    # wall-clock numbers are kept out of the CSVs so those stay bit-reproducible
    write_json({"seconds": timing, "ece_bins": cfg.eval.ece_bins}, out / "timing.json")
    _write_config(cfg, out)


def _log_records(log_: PredictionLog) -> tuple[dict, int, str]:
    kinds = {e.shape_kind for e in log_.entries}
    if len(kinds) != 1:
        raise ValueError(f"prediction log mixes entry shapes {sorted(kinds)}")
    kind = kinds.pop()
    selectors = (Selector.MAXPROB,) if kind == "probs" else pipeline.SAMPLED_SELECTORS
    first = log_.entries[0]
    n = 1 if kind == "probs" else (first.summary.n_samples if kind == "summary" else first.samples.shape[0])
    return {s: log_to_records(log_, s) for s in selectors}, n, kind


def cmd_eval(cfg: RunConfig, args) -> dict:
    out = output_dir(cfg, "eval")
    mcfg = pipeline.metrics_config(cfg)
    wide, long, curves, timing = [], [], [], {}
    if args.log:
        # stored logs are scored directly; no model or optimizer code runs
        test, n, kind = _log_records(read_log(args.log))
        val = _log_records(read_log(args.val_log))[0] if args.val_log else None
        ood = _log_records(read_log(args.ood_log))[0] if args.ood_log else None
        w, l, c = pipeline.report_rows(
            test, method="log", mode=kind, n_samples=n, seed=cfg.seeds[0], mcfg=mcfg, alphas=cfg.eval.alphas,
            ood=ood, val=val, mixture_size=cfg.eval.mixture_size, curves=cfg.eval.curves,
        )
        wide, long, curves = w, l, c
    else:
        for ckpt, seed, splits in _checkpoint_inputs(cfg, args):
            w, l, c, t = pipeline.evaluate_checkpoint(ckpt, cfg, seed, splits["val"], splits["test"], splits.get("ood"))
            wide += w
            long += l
            curves += c
            timing.update({f"seed{seed}/{k}": v for k, v in t.items()})
            if args.write_log:
                res = pipeline.sampled_summary(ckpt, splits["test"], cfg.eval.test_samples, seed, "test")
                write_log(entries_from_predictions(splits["test"], res), out / f"seed{seed}" / "predictions.jsonl")
    _write_report(out, cfg, wide, long, curves, timing, "report")
    return {"output_dir": str(out), "rows": len(wide)}


def cmd_sweep(cfg: RunConfig, args) -> dict:
    out = output_dir(cfg, "sweep")
    wide, long, curves, timing = [], [], [], {}
    for ckpt, seed, splits in _checkpoint_inputs(cfg, args):
        if args.axis == "mc_samples":
            mode_names = ["sampled"] + (["mc_dropout"] if cfg.eval.mc_dropout_rate > 0 else [])
            modes = [(m, n) for m in mode_names for n in cfg.eval.mc_grid]
            alphas = cfg.eval.alphas
        else:
            modes = pipeline.eval_modes(ckpt, cfg)
            alphas = cfg.eval.sweep_alphas
        w, l, c, t = pipeline.evaluate_checkpoint(
            ckpt, cfg, seed, splits["val"], splits["test"], splits.get("ood"), modes=modes, alphas=alphas
        )
        wide += w
        long += l
        curves += c
        timing.update({f"seed{seed}/{k}": v for k, v in t.items()})
        if args.axis == "mc_samples":
            per_n = {n: t[f"sampled@{n}"] for n in cfg.eval.mc_grid}
            ratio = pipeline.runtime_linearity(per_n)
            log.info("seed %d: per-sample runtime spread across N>=4 is %.2fx", seed, ratio)
            timing[f"seed{seed}/linearity_ratio"] = ratio
    _write_report(out, cfg, wide, long, curves, timing, "sweep")
    return {"output_dir": str(out), "axis": args.axis, "rows": len(wide)}


def cmd_mix(cfg: RunConfig, args) -> dict:
    id_log, ood_log = read_log(args.id_log), read_log(args.ood_log)
    spec = MixtureSpec(args.alpha, args.seed, args.size if args.size == "max-balanced" else int(args.size))
    is_ood, index = mix_indices(len(id_log), len(ood_log), spec)
    entries = [ood_log.entries[i] if o else id_log.entries[i] for o, i in zip(is_ood, index)]
    out = Path(args.out) if args.out else output_dir(cfg, "mix") / f"mix_alpha{args.alpha}.jsonl"
    write_log(entries, out)
    return {"output": str(out), "n": len(entries), "n_ood": int(is_ood.sum())}


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "mix": cmd_mix,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="varsel", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON run config; flags override its fields")
        add_config_flags(p)
        return p

    add("gen-data", "write synthetic train/val/test/ood datasets per seed")
    p = add("train", "train one model per seed; writes checkpoint.json and trace.jsonl")
    p.add_argument("--data-dir", help="read datasets written by gen-data instead of regenerating")
    p = add("eval", "report metrics for checkpoints or a prediction log")
    p.add_argument("--checkpoint", nargs="+", help="checkpoint file(s) from train")
    p.add_argument("--data-dir")
    p.add_argument("--log", help="prediction log to evaluate instead of a checkpoint")
    p.add_argument("--val-log", help="validation log used to pick Phi thresholds")
    p.add_argument("--ood-log", help="OOD log for alpha > 0")
    p.add_argument("--write-log", action="store_true", help="also write the sampled test predictions as a log")
    p = add("sweep", "evaluate over the MC-sample grid or the alpha grid")
    p.add_argument("--axis", choices=("mc_samples", "alpha"), required=True)
    p.add_argument("--checkpoint", nargs="+", required=True)
    p.add_argument("--data-dir")
    p = add("mix", "write an ID/OOD mixture of two prediction logs")
    p.add_argument("--id-log", required=True)
    p.add_argument("--ood-log", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", default="max-balanced")
    p.add_argument("--out")
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        result = COMMANDS[args.command](cfg, args)
    except TrainingDiverged as exc:
        return _fail("training_diverged", str(exc), 3)
    except (ValueError, TypeError, KeyError, FormatError, FileNotFoundError) as exc:
        return _fail(type(exc).__name__, str(exc), 2)
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        return _fail(type(exc).__name__, str(exc), 1)
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
