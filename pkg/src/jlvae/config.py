"""Run configuration: preset defaults < JSON config file < command-line flags."""

from __future__ import annotations

import copy
import json
import os
from dataclasses import fields
from typing import Any, Optional

from .data.synth import PLANT_SYNTH, SynthSpec
from .model import PRESETS, ModelConfig
from .training import TrainConfig

PRESET_NAMES = tuple(PRESETS)

DEFAULTS: dict[str, Any] = {
    "preset": "kdd99",
    "seed": 0,
    "model": {},
    "train": {},
    "split": {"val_fraction": 0.15, "test_fraction": 0.2},
    "eval": {
        "k_folds": 5,
        "subsample": None,
        "lof_k": 20,
        "lof_max_rows": 50_000,
        "iforest_trees": 100,
        "iforest_subsample": 256,
        "prob_samples": 10,
        "top_k": 100,
    },
    "score": {"method": "recon_error", "samples": 10},
    "robustness": {"target_rate": 0.01, "n_rows": 10_000},
    "synth": {},
}

PRESET_OVERRIDES: dict[str, dict] = {
    "kdd99": {},
    "plant_synth": {"synth": PLANT_SYNTH.to_dict()},
}

_MODEL_KEYS = {f.name for f in fields(ModelConfig)}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
_SYNTH_KEYS = {f.name for f in fields(SynthSpec)}


class ConfigError(ValueError):
    pass


def _merge(base: dict, extra: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        where = f"{path}{key}"
        if key not in out and path not in ("model.", "train.", "synth."):
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(out.get(key), dict) and isinstance(value, dict):
            out[key] = _merge(out[key], value, where + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate(cfg: dict) -> dict:
    if cfg["preset"] not in PRESETS:
        raise ConfigError(f"preset must be one of {PRESET_NAMES}, got {cfg['preset']!r}")
    for section, allowed in (("model", _MODEL_KEYS), ("train", _TRAIN_KEYS), ("synth", _SYNTH_KEYS)):
        unknown = set(cfg[section]) - allowed
        if unknown:
            raise ConfigError(f"unknown {section} key(s): {sorted(unknown)}")
    if cfg["score"]["method"] not in ("recon_error", "recon_probability"):
        raise ConfigError("score.method must be recon_error or recon_probability")
    if cfg["eval"]["k_folds"] < 2:
        raise ConfigError("eval.k_folds must be >= 2")
    # surface dataclass-level validation early
    model_config(cfg)
    train_config(cfg)
    synth_spec(cfg)
    return cfg


def build(preset: Optional[str] = None, file: Optional[os.PathLike] = None, overrides: Optional[dict] = None) -> dict:
    """Resolve a run config from the three layers and validate it."""
    user: dict = {}
    if file is not None:
        with open(file) as fh:
            user = json.load(fh)
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a JSON object")
    name = preset or user.get("preset") or DEFAULTS["preset"]
    if name not in PRESETS:
        raise ConfigError(f"preset must be one of {PRESET_NAMES}, got {name!r}")
    cfg = _merge(DEFAULTS, PRESET_OVERRIDES[name])
    cfg = _merge(cfg, user)
    cfg["preset"] = name
    if overrides:
        cfg = _merge(cfg, overrides)
    return validate(cfg)


def model_config(cfg: dict, dim_x: Optional[int] = None, dim_c: Optional[int] = None) -> ModelConfig:
    factory = PRESETS[cfg["preset"]]
    kw = dict(cfg["model"])
    if dim_x is not None:
        kw["dim_x"] = dim_x
    if dim_c is not None:
        kw["dim_c"] = dim_c
    return factory(**kw)


def train_config(cfg: dict) -> TrainConfig:
    kw = {"seed": cfg["seed"]}
    kw.update(cfg["train"])
    return TrainConfig(**kw)


def synth_spec(cfg: dict) -> SynthSpec:
    return SynthSpec(**cfg["synth"])
