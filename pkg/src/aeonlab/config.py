"""Config files (TOML or JSON) and their mapping onto the config dataclasses.

A run config has two optional tables, ``[synth]`` and ``[train]``; the train
table may nest ``[train.model]``, ``[train.loss]``, ``[train.loss.mask]`` and
``[train.loss.augment]``.
"""
from __future__ import annotations

import copy
import json
import os
from pathlib import Path

import toml

from .benchmark import ConfigError, SynthConfig
from .trainer import TrainConfig

SEED_ENV = "AEON_SEED"

# Desk-scale setting used by the acceptance run, scripts and configs/desk.toml.
DESK: dict = {
    "synth": {"embed_dim": 2},
    "train": {"epochs": 60, "warmup_epochs": 10},
}


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such config file: {path}")
    text = path.read_text()
    try:
        if path.suffix.lower() == ".json":
            cfg = json.loads(text)
        else:
            cfg = toml.loads(text)
    except (ValueError, toml.TomlDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a table")
    return cfg


def merge(base: dict, override: dict) -> dict:
    """Recursive dict merge; ``override`` wins, nested tables merge."""
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def env_seed() -> int | None:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _build(cls, table, what: str):
    if table is None:
        table = {}
    if not isinstance(table, dict):
        raise ConfigError(f"[{what}] must be a table")
    try:
        return cls(**table)
    except TypeError as exc:
        raise ConfigError(f"[{what}]: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"[{what}]: {exc}") from None


def synth_config(cfg: dict, seed: int | None = None) -> SynthConfig:
    table = dict(cfg.get("synth", {}))
    if seed is not None:
        table["seed"] = seed
    return _build(SynthConfig, table, "synth")


def train_config(cfg: dict, seed: int | None = None) -> TrainConfig:
    table = copy.deepcopy(cfg.get("train", {}))
    if seed is not None:
        table["seed"] = seed
    return _build(TrainConfig, table, "train")


def set_path(cfg: dict, dotted: str, value) -> None:
    """Assign ``value`` at a dotted key such as ``train.loss.mask.T_E``."""
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        nxt = node.setdefault(k, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"{dotted}: {k} is not a table")
        node = nxt
    node[keys[-1]] = value
