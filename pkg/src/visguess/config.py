"""Run configuration: nested JSON with defaults, strict key checking and
preset files shipped under configs/."""

from __future__ import annotations

import copy
import json

from .env import EnvConfig
from .trainer import RunConfig
from .worldgen import WorldConfig


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "world": {
        "embed_dim": 64,
        "n_images": 20,
        "pool_size": 10,
        "distractor_noise": 1.0,
        "caption_noise": 1.2,
        "answer_noise": 0.15,
        "answer_corrupt_prob": 0.0,
        "mask_density_min": 0.02,
        "mask_density_max": 0.1875,
        "n_clusters": 4,
        "seed": 0,
    },
    "env": {
        "max_turns": 10,
        "max_guesses": 3,
        "r_win": 10.0,
        "r_loss": -10.0,
        "r_wrong_guess": -3.0,
        "gamma": 0.99,
    },
    "run": {
        "variant": "hrl_sar",
        "iterations": 20000,
        "eval_every": 1000,
        "eval_games": 100,
        "seed": 0,
        "batch_size": 64,
        "update_every": 5,
        "target_sync_every": 500,
        "dqn_capacity": 25000,
        "drrn_capacity": 50000,
        "pr_alpha": 0.6,
        "pr_beta_start": 0.4,
        "dqn_hidden": [128, 64, 32],
        "drrn_hidden": [256, 128],
        "dqn_lr": 1e-3,
        "drrn_lr": 1e-3,
        "anneal_episodes": None,
    },
    "pretrain": {
        "epochs": 15,
        "lr": 1e-3,
        "margin": 0.2,
        "batch_size": 64,
        "seed": 0,
    },
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {here!r} must be a section")
            out[key] = _merge(base[key], val, here)
        else:
            out[key] = val
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Resolve defaults <- config file <- overrides, rejecting unknown
    keys at any level."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        with open(path) as f:
            try:
                doc = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: invalid JSON: {e}") from e
        cfg = _merge(cfg, doc)
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


def world_config(cfg: dict) -> WorldConfig:
    wc = WorldConfig(**cfg["world"])
    wc.validate()
    return wc


def env_config(cfg: dict) -> EnvConfig:
    ec = EnvConfig(**cfg["env"])
    ec.validate()
    return ec


def run_config(cfg: dict) -> RunConfig:
    r = dict(cfg["run"])
    r["dqn_hidden"] = tuple(r["dqn_hidden"])
    r["drrn_hidden"] = tuple(r["drrn_hidden"])
    rc = RunConfig(**r)
    rc.validate()
    return rc
