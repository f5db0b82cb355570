from __future__ import annotations

import json
from pathlib import Path

import pytest

from tack import config as cfgmod
from tack.errors import InvalidConfig, UnknownMode


@pytest.mark.parametrize("name", cfgmod.PRESETS)
def test_presets_build(name):
    run = cfgmod.build({"preset": name})
    assert run.preset == name
    assert run.scene.height % 2**run.model.depth == 0 and run.scene.width % 2**run.model.depth == 0


def test_toy_preset_pins_the_documented_setting():
    run = cfgmod.build({"preset": "toy"})
    assert (run.scene.width, run.scene.height) == (64, 48)
    assert run.scene.train_objects == 1 and run.scene.single_object
    assert run.model.embedding_size == 4 and run.model.depth == 4 and run.model.mode == "film"
    assert run.train.n_cond == 3 and run.train.loss == "both" and run.train.steps == 5000 and run.seed == 0


def test_desk_defaults():
    run = cfgmod.load()
    assert run.model.widths()[0] == 32 and run.train.lr_start == 1e-4 and run.train.lr_end == 1e-5
    assert run.scene.sigma == 2.0


def test_overrides_merge_deeply(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"preset": "toy", "train": {"steps": 10}}))
    run = cfgmod.load(p, {"train": {"loss": "adapt"}, "scene": {"distractors": 2}})
    assert run.train.steps == 10 and run.train.loss == "adapt" and run.scene.distractors == 2
    assert run.model.base_width == cfgmod.build({"preset": "toy"}).model.base_width


@pytest.mark.parametrize("raw", [
    {"preset": "huge"},
    {"train": {"loss": "everything"}},
    {"train": {"steps": 0}},
    {"model": {"mode": "attention"}},
    {"scene": {"span": [0.2]}},
    {"unknown": 1},
    {"scene": {"object_class": {"length": [0.3, 0.2]}}},
])
def test_invalid_configs(raw):
    with pytest.raises(InvalidConfig):
        cfgmod.build(raw)


def test_unknown_mode_is_a_config_error():
    assert issubclass(UnknownMode, InvalidConfig)


def test_bad_json_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{")
    with pytest.raises(InvalidConfig):
        cfgmod.load(p)
    p.write_text("[1, 2]")
    with pytest.raises(InvalidConfig):
        cfgmod.load(p)


def test_to_dict_round_trips_through_schema():
    run = cfgmod.build({"preset": "full"})
    again = cfgmod.build(json.loads(json.dumps(run.to_dict())))
    assert again.to_dict() == run.to_dict()


def test_checked_in_schema_matches_code():
    path = Path(__file__).resolve().parents[1] / "docs" / "config.schema.json"
    assert json.loads(path.read_text()) == cfgmod.SCHEMA
