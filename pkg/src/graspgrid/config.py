"""Run configuration: YAML in, validated dict out.

The schema is the DEFAULTS tree; unknown keys anywhere are an error (silent
typos in experiment configs are how results stop meaning anything). Numeric
leaves are coerced to the default's type. Every artifact-producing command
records the sha256 of the canonical JSON dump of the effective config.
"""

from __future__ import annotations

import hashlib
import json

import yaml

from .collision import GripperGeometry, short_gripper
from .controller import ControllerConfig
from .loop import TrainLoopConfig
from .network import ModelSpec
from .scene import BinGeometry


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "seed": 0,
    "gripper": {
        "kind": "normal",              # normal | short
        "body_half_width": 0.035,
        "finger_width": 0.022,
        "finger_length": None,         # None: per kind (0.12 / 0.06)
        "body_top": 0.25,
        "plate_thickness": 0.008,
        "strokes": [0.025, 0.05, 0.07, 0.086],
        "max_stroke": 0.086,
        "approach_depth": 0.015,
        "retract": 0.003,
    },
    "scene": {
        "bin_inner": 0.30,
        "wall_thickness": 0.02,
        "wall_height": 0.10,
        "map_px": 110,
        "resolution": 0.11 / 32.0,
    },
    "model": {
        "channels": [2, 8, 12, 16, 16, 24, 7],
        "dilations": [1, 1, 2, 3, 4, 4],
        "kernel": 3,
        "n_primitives": 4,
        "dropout": 0.1,
        "momentum": 0.1,
    },
    "controller": {
        "sigma_scale": 1.5,
        "rho": 0.5,
        "max_lateral": 0.5,
    },
    "loop": {
        "attempts": 2700,
        "warmup_random": 400,
        "boltzmann_until": 1600,
        "epsilon": 0.1,
        "t_start": 1.0,
        "t_end": 0.05,
        "n_rot": 8,
        "retrain_interval": 200,
        "epochs_per_retrain": 2,
        "batch_size": 64,
        "lr": 1e-4,
        "aux_weight": 0.1,
        "aux_on": True,
        "adaption": True,
        "curriculum": [1, 5, 10, 20],
        "advance_thresholds": [0.6, 0.5, 0.4],
        "rolling": 100,
        "retry_budget": 25,
        "workers": 1,
        "augment": True,
    },
    "plan": {
        "n_rot": 20,
    },
}


def _merge(defaults, override, path=""):
    if isinstance(defaults, dict):
        if not isinstance(override, dict):
            raise ConfigError(f"{path or 'config'}: expected a mapping")
        out = {}
        for key, dval in defaults.items():
            if key in override:
                out[key] = _merge(dval, override[key], f"{path}{key}.")
            else:
                out[key] = json.loads(json.dumps(dval))  # deep copy of leaves
        unknown = set(override) - set(defaults)
        if unknown:
            raise ConfigError(f"{path or 'config'}: unknown keys {sorted(unknown)}")
        return out
    # leaf: coerce numerics toward the default's type
    if isinstance(defaults, bool):
        if not isinstance(override, bool):
            raise ConfigError(f"{path[:-1]}: expected a boolean")
        return override
    if isinstance(defaults, (int, float)) and defaults is not None:
        if isinstance(override, bool) or not isinstance(override, (int, float)):
            raise ConfigError(f"{path[:-1]}: expected a number")
        return type(defaults)(override) if isinstance(defaults, float) else override
    if isinstance(defaults, list):
        if not isinstance(override, list):
            raise ConfigError(f"{path[:-1]}: expected a list")
        return list(override)
    return override


def load_config(path: str | None = None) -> dict:
    """Defaults merged with the YAML file at `path` (strict keys)."""
    override = {}
    if path is not None:
        with open(path) as f:
            loaded = yaml.safe_load(f)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError("top level of the config must be a mapping")
        override = loaded
    return _merge(DEFAULTS, override)


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


# -- constructors ---------------------------------------------------------------


def gripper_from_config(cfg: dict) -> GripperGeometry:
    g = cfg["gripper"]
    if g["kind"] not in ("normal", "short"):
        raise ConfigError("gripper.kind must be 'normal' or 'short'")
    length = g["finger_length"]
    if length is None:
        length = 0.06 if g["kind"] == "short" else 0.12
    base = GripperGeometry(
        body_half_width=g["body_half_width"], finger_width=g["finger_width"],
        finger_length=length, body_top=g["body_top"],
        plate_thickness=g["plate_thickness"], strokes=tuple(g["strokes"]),
        max_stroke=g["max_stroke"],
        approach_depth=g["approach_depth"], retract=g["retract"])
    return base


def bin_from_config(cfg: dict) -> BinGeometry:
    s = cfg["scene"]
    return BinGeometry(s["bin_inner"], s["wall_thickness"], s["wall_height"])


def spec_from_config(cfg: dict) -> ModelSpec:
    m = cfg["model"]
    return ModelSpec(channels=tuple(m["channels"]),
                     dilations=tuple(m["dilations"]), kernel=m["kernel"],
                     n_primitives=m["n_primitives"], dropout=m["dropout"],
                     momentum=m["momentum"])


def controller_from_config(cfg: dict) -> ControllerConfig:
    c = cfg["controller"]
    return ControllerConfig(c["sigma_scale"], c["rho"], c["max_lateral"])


def loop_from_config(cfg: dict) -> TrainLoopConfig:
    lo = dict(cfg["loop"])
    lo["curriculum"] = tuple(lo["curriculum"])
    lo["advance_thresholds"] = tuple(lo["advance_thresholds"])
    return TrainLoopConfig(**lo)
