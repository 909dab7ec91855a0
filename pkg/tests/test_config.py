import argparse
import json
import math

import pytest

from varsel.config import RunConfig, add_config_flags, leaf_fields, resolve_config


def parse(argv):
    p = argparse.ArgumentParser()
    p.add_argument("--config")
    add_config_flags(p)
    return resolve_config(p.parse_args(argv))


class TestRunConfig:
    def test_round_trip(self, tmp_path):
        cfg = parse(["--ivon.lr", "0.3", "--eval.mc_grid", "1,4", "--train.lam", "none", "--seeds", "3,4"])
        path = tmp_path / "c.json"
        path.write_text(cfg.to_json())
        assert RunConfig.load(path) == cfg
        assert cfg.ivon.lr == 0.3 and cfg.eval.mc_grid == (1, 4) and cfg.seeds == (3, 4)

    def test_infinite_values_serialized(self):
        cfg = parse(["--ivon.grad_clip_norm", "inf"])
        data = json.loads(cfg.to_json())
        assert data["ivon"]["grad_clip_norm"] == "inf"
        assert math.isinf(RunConfig.from_dict(data).ivon.grad_clip_norm)

    def test_every_field_has_a_flag(self):
        names = {n for n, _ in leaf_fields()}
        assert {"task.n_train", "ivon.h0", "adamw.lr", "eval.alphas", "train.optimizer", "seeds", "output_dir"} <= names

    def test_file_then_flags(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"task": {"n_train": 123}, "ivon": {"lr": 0.5}}))
        cfg = parse(["--config", str(path), "--ivon.lr", "0.7"])
        assert cfg.task.n_train == 123 and cfg.ivon.lr == 0.7

    def test_unknown_field(self):
        with pytest.raises(ValueError, match="unknown"):
            RunConfig.from_dict({"task": {"n_trian": 5}})

    def test_bad_flag_value(self):
        with pytest.raises(ValueError, match="--task.n_train"):
            parse(["--task.n_train", "many"])
        with pytest.raises(ValueError):
            parse(["--train.optimizer", "sgd"])
