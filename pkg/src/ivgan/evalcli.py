"""Evaluation metric and run configuration.

PSNR is measured on [0, 1]-mapped values with a peak of 1; in ``gray``
space both clips are reduced to BT.601 luma first. A perfect match reports
:data:`PSNR_CAP` instead of infinity so results can be tabulated.

A run configuration is a flat JSON object. Every key is optional; missing
keys take the defaults below, unknown keys are rejected by name.
"""

from dataclasses import dataclass
import json
import math
import os

import numpy as np

from . import apps
from . import data as D
from . import io
from . import models
from .wgan import TrainConfig

PSNR_CAP = 99.0


def psnr(a, b, space="gray"):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    if space == "gray":
        if a.shape[-1] == 3:
            a, b = apps.to_grayscale(a), apps.to_grayscale(b)
        elif a.shape[-1] != 1:
            raise ValueError(f"gray psnr needs 1 or 3 channels, got {a.shape[-1]}")
    elif space != "rgb":
        raise ValueError(f"unknown psnr space {space!r}")
    u = (a.astype(np.float64) + 1.0) * 0.5
    v = (b.astype(np.float64) + 1.0) * 0.5
    mse = float(np.mean((u - v) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class DataConfig:
    preset: str = "moving_squares_static_bg"
    size: int = 100_000  # clips in the synthetic corpus; small corpora get memorized by the critic
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig
    net: models.NetConfig
    task: apps.TaskSpec
    data: DataConfig


class ConfigError(ValueError):
    pass


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _int(v):
    return isinstance(v, int) and not isinstance(v, bool)


# key -> (kind, check, where, field)
_KEYS = {
    "lambda": ("number", lambda v: v >= 0, "train", "lam"),
    "nu": ("number", lambda v: v >= 0, "task", "nu"),
    "alpha": ("number", lambda v: v >= 0, "train", "alpha"),
    "beta1": ("number", lambda v: 0 <= v < 1, "train", "beta1"),
    "beta2": ("number", lambda v: 0 <= v < 1, "train", "beta2"),
    "batch_size": ("int", lambda v: v >= 2, "train", "batch_size"),
    "critic_ratio": ("int", lambda v: v >= 1, "train", "critic_ratio"),
    "total_steps": ("int", lambda v: v >= 0, "train", "total_steps"),
    "lr_halve_at": ("int list", lambda v: all(s >= 1 for s in v), "train", "lr_halve_at"),
    "seed": ("int", lambda v: v >= 0, "train", "seed"),
    "scale": ("str", lambda v: v in models.PRESETS, "train", "scale"),
    "checkpoint_every": ("int", lambda v: v >= 0, "train", "checkpoint_every"),
    "task": ("str", lambda v: v in apps.TASKS, "task", "task"),
    "corruption": ("str", lambda v: v in apps.CORRUPTIONS, "task", "corruption"),
    "noise_p": ("number", lambda v: 0 <= v <= 1, "task", "noise_p"),
    "hole_size": ("int", lambda v: v >= 0, "task", "hole_size"),
    "hole_mode": ("str", lambda v: v in apps.HOLE_MODES, "task", "hole_mode"),
    "data_preset": ("str", lambda v: v in D.PRESETS, "data", "preset"),
    "data_size": ("int", lambda v: v >= 2, "data", "size"),
    "data_seed": ("int", lambda v: v >= 0, "data", "seed"),
    "base_width": ("int", lambda v: v >= 1, "net", "base_width"),
    "z_dim": ("int", lambda v: v >= 1, "net", "z_dim"),
}

_TYPES = {
    "number": _num,
    "int": _int,
    "str": lambda v: isinstance(v, str),
    "int list": lambda v: isinstance(v, list) and all(_int(s) for s in v),
}


def resolve(obj):
    """Validate a config mapping and fill in defaults; returns a :class:`RunConfig`."""
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    parts = dict(train={}, task={}, data={}, net={})
    for key, value in obj.items():
        if key not in _KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        kind, ok, where, name = _KEYS[key]
        if not _TYPES[kind](value):
            raise ConfigError(f"config key {key!r} must be a {kind}, got {value!r}")
        if not ok(value):
            raise ConfigError(f"config key {key!r} is out of range: {value!r}")
        parts[where][name] = tuple(value) if kind == "int list" else value
    train = TrainConfig(**parts["train"])
    try:
        net = models.NetConfig.preset(train.scale, **parts["net"])
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return RunConfig(train, net, apps.TaskSpec(**parts["task"]), DataConfig(**parts["data"]))


def to_dict(run):
    """Flat resolved mapping with every key present."""
    out = {}
    for key, (kind, _, where, name) in _KEYS.items():
        v = getattr(getattr(run, where), name)
        out[key] = list(v) if kind == "int list" else v
    return out


def config_load(path):
    try:
        with open(path) as f:
            obj = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return resolve(obj)


def write_resolved(run, out_dir, name="resolved_config.json"):
    path = os.path.join(out_dir, name)
    text = json.dumps(to_dict(run), indent=2, sort_keys=True) + "\n"
    io.atomic_write(path, text.encode())
    return path

