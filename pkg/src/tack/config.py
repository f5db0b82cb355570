"""Run configuration: JSON schema, presets and conversion to typed configs."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, fields
from pathlib import Path

import jsonschema

from .errors import InvalidConfig
from .model import MODES, ModelConfig
from .scene import ObjectClassConfig, SceneConfig
from .training import LOSS_MODES, TrainConfig

PRESETS = ("desk", "toy", "full")


def _range_schema() -> dict:
    return {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 2, "maxItems": 2}


def _color_schema() -> dict:
    return {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}, "minItems": 3, "maxItems": 3}


SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "tack run configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "preset": {"enum": list(PRESETS)},
        "seed": {"type": "integer", "minimum": 0},
        "scene": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "width": {"type": "integer", "minimum": 2},
                "height": {"type": "integer", "minimum": 2},
                "focal_ratio": {"type": "number", "exclusiveMinimum": 0},
                "sigma": {"type": "number", "exclusiveMinimum": 0},
                "pad": {"type": "integer", "minimum": 0},
                "pose_std": {"type": "number", "minimum": 0},
                "in_plane_range": {"type": "number", "minimum": 0},
                "span": _range_schema(),
                "lateral": {"type": "number", "minimum": 0},
                "fov_margin": {"type": "number", "minimum": 0},
                "offsurface_sigma": {"type": "number", "minimum": 0},
                "distractors": {"type": "integer", "minimum": 0},
                "background": _color_schema(),
                "background_noise": {"type": "number", "minimum": 0},
                "train_objects": {"type": "integer", "minimum": 1},
                "eval_objects": {"type": "integer", "minimum": 0},
                "object_seed": {"type": "integer", "minimum": 0},
                "single_object": {"type": "boolean"},
                "object_class": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "length": _range_schema(),
                        "width_ratio": _range_schema(),
                        "height_ratio": _range_schema(),
                        "exponent": _range_schema(),
                        "wedge_length": _range_schema(),
                        "wedge_height": _range_schema(),
                        "n_lat": {"type": "integer", "minimum": 3},
                        "n_lon": {"type": "integer", "minimum": 3},
                    },
                },
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "embedding_size": {"type": "integer", "minimum": 1},
                "depth": {"type": "integer", "minimum": 1},
                "mode": {"enum": list(MODES)},
                "base_width": {"type": "integer", "minimum": 1},
                "max_width": {"type": "integer", "minimum": 1},
                "mlp_hidden": {"type": "integer", "minimum": 1},
                "image_channels": {"const": 3},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "steps": {"type": "integer", "minimum": 1},
                "batch_size": {"type": "integer", "minimum": 1},
                "lr_start": {"type": "number", "exclusiveMinimum": 0},
                "lr_end": {"type": "number", "minimum": 0},
                "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "eps": {"type": "number", "exclusiveMinimum": 0},
                "w_adapt": {"type": "number", "minimum": 0},
                "w_auto": {"type": "number", "minimum": 0},
                "w_seg": {"type": "number", "minimum": 0},
                "loss": {"enum": list(LOSS_MODES)},
                "n_cond": {"type": "integer", "minimum": 1},
                "n_valid": {"type": "integer", "minimum": 1},
                "augment_pad": {"type": "integer", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "log_every": {"type": "integer", "minimum": 1},
                "eval_every": {"type": "integer", "minimum": 1},
                "eval_batches": {"type": "integer", "minimum": 0},
                "checkpoint_every": {"type": "integer", "minimum": 1},
            },
        },
        "eval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "meta_batches": {"type": "integer", "minimum": 1},
                "sweep_tasks": {"type": "integer", "minimum": 1},
                "max_annotations": {"type": "integer", "minimum": 1},
                "test_views": {"type": "integer", "minimum": 1},
                "points_per_object": {"type": "integer", "minimum": 1},
                "offsurface_sigma": {"type": "number", "minimum": 0},
                "interpolation_steps": {"type": "integer", "minimum": 2},
            },
        },
        "paths": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"data": {"type": "string"}, "out": {"type": "string"}, "rig": {"type": "string"}},
        },
    },
}


@dataclass(frozen=True)
class EvalOptions:
    meta_batches: int = 64
    sweep_tasks: int = 200
    max_annotations: int = 16
    test_views: int = 4
    points_per_object: int = 3000
    offsurface_sigma: float = 0.05
    interpolation_steps: int = 9


@dataclass
class RunConfig:
    preset: str
    seed: int
    scene: SceneConfig
    model: ModelConfig
    train: TrainConfig
    eval: EvalOptions
    paths: dict

    def to_dict(self) -> dict:
        return {
            "preset": self.preset,
            "seed": self.seed,
            "scene": _jsonable(self.scene.to_dict()),
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "eval": {f.name: getattr(self.eval, f.name) for f in fields(EvalOptions)},
            "paths": dict(self.paths),
        }


def _jsonable(d):
    if isinstance(d, dict):
        return {k: _jsonable(v) for k, v in d.items()}
    if isinstance(d, (tuple, list)):
        return [_jsonable(v) for v in d]
    return d


def preset(name: str) -> dict:
    """Raw configuration dictionary for a named preset."""
    if name == "desk":
        return {"preset": "desk", "seed": 0, "scene": {}, "model": {}, "train": {"steps": 5000}, "eval": {}, "paths": {}}
    if name == "toy":
        # single procedural object, network narrow enough for a few-minute-per-thousand-steps CPU run
        return {
            "preset": "toy",
            "seed": 0,
            "scene": {"train_objects": 1, "eval_objects": 1, "single_object": True},
            "model": {"embedding_size": 4, "depth": 4, "mode": "film", "base_width": 8, "mlp_hidden": 32},
            "train": {"steps": 5000, "batch_size": 2, "lr_start": 1e-3, "lr_end": 1e-4, "loss": "both", "n_cond": 3, "eval_every": 500, "eval_batches": 64},
            "eval": {},
            "paths": {},
        }
    if name == "full":
        return {
            "preset": "full",
            "seed": 0,
            "scene": {"width": 160, "height": 120, "sigma": 5.0, "pad": 8, "train_objects": 56, "eval_objects": 8, "fov_margin": 8.0, "distractors": 2},
            "model": {"depth": 3},  # 120 = 8 * 15 admits three halvings
            "train": {"batch_size": 32, "augment_pad": 8},
            "eval": {},
            "paths": {},
        }
    raise InvalidConfig(f"unknown preset {name!r}; expected one of {PRESETS}")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(raw: dict) -> None:
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise InvalidConfig(f"config error at {where}: {e.message}") from None


def build(raw: dict) -> RunConfig:
    """Validate a raw dictionary, layer it over its preset and produce typed configs."""
    validate(raw)
    merged = _merge(preset(raw.get("preset", "desk")), raw)
    validate(merged)
    sc = dict(merged["scene"])
    if "object_class" in sc:
        sc["object_class"] = ObjectClassConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in sc["object_class"].items()})
    for k in ("span", "background"):
        if k in sc:
            sc[k] = tuple(sc[k])
    scene = SceneConfig(**sc)
    scene.object_class.validate()
    model = ModelConfig(**merged["model"])
    train_raw = dict(merged["train"])
    train_raw.setdefault("seed", merged["seed"])
    train = TrainConfig(**train_raw)
    return RunConfig(merged["preset"], merged["seed"], scene, model, train, EvalOptions(**merged["eval"]), merged["paths"])


def load(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a JSON config file (or start from the desk preset) and apply ``overrides``."""
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise InvalidConfig(f"{path}: invalid JSON ({e})") from None
        if not isinstance(raw, dict):
            raise InvalidConfig(f"{path}: top level must be an object")
    if overrides:
        raw = _merge(raw, overrides)
    return build(raw)


def schema_json() -> str:
    return json.dumps(SCHEMA, indent=2) + "\n"
