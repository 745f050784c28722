"""Flat run configuration: defaults, `key = value` file parsing, and
precedence (defaults < config file < SLADE_SEED env < explicit flags)."""

from __future__ import annotations

import os

from .errors import ConfigError
from .model import ModelConfig
from .training import LossWeights, TrainConfig

DEFAULTS = {
    "memory_dim": 256,
    "message_dim": 128,
    "time_dim": 256,
    "max_neighbors": 20,
    "heads": 2,
    "dropout": 0.1,
    "updater": "gru",
    "generator": "tgat",
    "time_alpha": 10.0,
    "time_beta": 25.6,
    "batch_size": 100,
    "learning_rate": 3e-6,
    "weight_decay": 1e-4,
    "epochs": 10,
    "negatives": 0,  # 0 means the full registry
    "exclude_self": False,
    "w_contrast_src": 1.0,
    "w_contrast_dst": 1.0,
    "w_gen_src": 0.1,
    "w_gen_dst": 0.1,
    "train_ratio": 0.7,
    "valid_ratio": 0.15,
    "test_ratio": 0.15,
    "seed": 0,
}


def _coerce(key, raw):
    kind = type(DEFAULTS[key])
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from exc


def parse_config_file(path):
    """Parse UTF-8 `key = value` lines; `#` starts a comment."""
    values = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {lineno}: expected key = value")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in DEFAULTS:
                raise ConfigError(f"{path}: line {lineno}: unknown key {key!r}")
            values[key] = _coerce(key, raw)
    return values


def resolve_config(file_path=None, overrides=None, env=None):
    """Merged configuration dict following the documented precedence."""
    env = os.environ if env is None else env
    merged = dict(DEFAULTS)
    if file_path:
        merged.update(parse_config_file(file_path))
    if "SLADE_SEED" in env:
        try:
            merged["seed"] = int(env["SLADE_SEED"])
        except ValueError as exc:
            raise ConfigError(f"SLADE_SEED: {exc}") from exc
    if overrides:
        for key, value in overrides.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            if value is not None:
                merged[key] = value
    return merged


def model_config(cfg):
    try:
        return ModelConfig(
            memory_dim=cfg["memory_dim"], message_dim=cfg["message_dim"],
            time_dim=cfg["time_dim"], max_neighbors=cfg["max_neighbors"],
            heads=cfg["heads"], dropout=cfg["dropout"], updater=cfg["updater"],
            generator=cfg["generator"], time_alpha=cfg["time_alpha"],
            time_beta=cfg["time_beta"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def train_config(cfg):
    try:
        return TrainConfig(
            batch_size=cfg["batch_size"], learning_rate=cfg["learning_rate"],
            weight_decay=cfg["weight_decay"], epochs=cfg["epochs"],
            negatives=cfg["negatives"] or None,
            exclude_self=cfg["exclude_self"], seed=cfg["seed"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def loss_weights(cfg):
    try:
        return LossWeights(
            contrast_src=cfg["w_contrast_src"], contrast_dst=cfg["w_contrast_dst"],
            gen_src=cfg["w_gen_src"], gen_dst=cfg["w_gen_dst"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def split_ratios(cfg):
    return (cfg["train_ratio"], cfg["valid_ratio"], cfg["test_ratio"])
