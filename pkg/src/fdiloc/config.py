"""Experiment configuration: defaults, file loading (YAML or JSON), schema
validation and resolution."""

from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path

import jsonschema
import yaml

from .exceptions import ConfigError

DEFAULTS: dict = {
    "case": "case14",
    "output_dir": "runs/default",
    "seed": 0,
    "jobs": 1,
    "weighted_adjacency": True,
    "dataset": {
        "samples": 3456,
        "noise": 0.01,
        "jitter": 0.02,
        "profile_csv": None,
        "export_csv": False,
        "attack": {
            "size_range": None,
            "v_rel": 0.02,
            "theta_deg": 2.0,
            "magnitude": 1.0,
            "tau_range": [30, 720],
            "scale_range": [0.9, 1.1],
            "neighbor_injections": True,
        },
    },
    "model": {
        "family": "arma",
        "layers": 3,
        "units": 16,
        "K": 2,
        "T": 4,
        "share_weights": True,
        "iter_activation": False,
    },
    "training": {
        "lr": 1e-3,
        "batch_size": 256,
        "max_epochs": 256,
        "patience": 16,
        "min_delta": 1e-4,
    },
    "eval": {
        "split": "test",
        "threshold": 0.5,
        "timing_calls": 200,
        "grid": {"layers": [1, 2, 3], "units": [16, 32, 64, 128], "K": [2, 3, 4], "T": [2, 3, 4, 5]},
    },
    "freq_response": {
        "case": "case57",
        "target": "bandpass_thirds",
        "models": ["cheb3", "cheb5", "cheb11", "arma3", "arma5"],
        "inputs": 4096,
        "batch_size": 64,
        "lr": 1e-2,
        "lr_drops": 3,
        "patience": 10,
        "max_epochs": 2000,
        "restarts": 4,
        "arma_T": 16,
    },
    "order_sweep": {"K": [2, 3, 4, 5, 7]},
}

# mapping-valued keys that are replaced wholesale rather than merged
_LEAF_MAPPINGS = {("eval", "grid")}


def schema() -> dict:
    return json.loads(resources.files("fdiloc").joinpath("config_schema.json").read_text())


def deep_merge(base: dict, override: dict, _path=()) -> dict:
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and (_path + (k,)) not in _LEAF_MAPPINGS:
            out[k] = deep_merge(out[k], v, _path + (k,))
        else:
            out[k] = copy.deepcopy(v)
    return out


def read_config_file(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    try:
        data = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{p}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    return data


def validate(cfg: dict) -> dict:
    try:
        jsonschema.validate(cfg, schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    att = cfg["dataset"]["attack"]
    for key in ("size_range", "tau_range", "scale_range"):
        r = att.get(key)
        if r is not None and r[0] > r[1]:
            raise ConfigError(f"config error at dataset/attack/{key}: lower bound exceeds upper bound")
    return cfg


def resolve(path=None, overrides: dict | None = None) -> dict:
    """Defaults <- config file <- overrides, then validated."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        cfg = deep_merge(cfg, read_config_file(path))
    if overrides:
        cfg = deep_merge(cfg, overrides)
    return validate(cfg)


def dump(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=None)
