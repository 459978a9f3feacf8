"""Run configuration: a single JSON document with strict validation.

Flags override file values; unknown keys anywhere in the document are
rejected before any work starts.
"""

from __future__ import annotations

import json
from pathlib import Path

from . import dqn, envgen, nn
from .optim import NetworkConfig


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "seed": 0,
    "network": {
        "num_bs": 1,
        "num_users": 1,
        "num_subcarriers": 128,
        "p_max": 10.0,
        "sigma2": 1e-3,
        "omega": 1e-9,
    },
    "env": {
        "decay_rho_db": 0.2,
        "doppler_fd": 40.0,
        "symbol_period": 1e-8,
        "path_loss": "none",
        "cell_radius": 1.0,
        "geometry_mode": "per_sample",
    },
    "universe": {"l_max": 32, "m_max": 128},
    "nonstat": {"k": 10, "seed": None},
    "dataset": {"count": 5000, "split": None, "labeler": None},
    "train": {
        "preset": "sm1-desk",
        "hidden_layers": None,
        "batch_size": 32,
        "max_epochs": 100,
        "min_delta": 1e-6,
        "patience": 50,
        "lr": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "adam_eps": 1e-8,
        "beta_power": 1.0,
        "norm": "linear_mean",
        "val_fraction": 0.2,
        "seed": None,
    },
    "dqn": {
        "discount": 0.99,
        "lr": 1e-3,
        "actions": 10,
        "delta": None,
        "steps_per_episode": None,
        "warmup_episodes": 1,
        "init_mode": "zero",
        "kb_capacity": 50_000,
        "batch_size": 32,
        "episodes": 1000,
        "eval_episodes": 200,
        "eps_start": 0.8,
        "eps_end": 0.01,
        "anneal_episodes": 1000,
    },
}


def _merge_strict(base: dict, user: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in user.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{here!r} must be a mapping")
            out[key] = _merge_strict(base[key], value, here)
        else:
            out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, overlaid by the JSON file, overlaid by flag overrides."""
    cfg = DEFAULTS
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config document must be a JSON object")
        cfg = _merge_strict(cfg, user)
    if overrides:
        cfg = _merge_strict(cfg, overrides)
    return cfg


def network_config(cfg: dict) -> NetworkConfig:
    try:
        return NetworkConfig(**cfg["network"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid network section: {exc}") from exc


def env_config(cfg: dict) -> envgen.EnvConfig:
    try:
        return envgen.EnvConfig(network=network_config(cfg), **cfg["env"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid env section: {exc}") from exc


def subset_spec(cfg: dict) -> envgen.NonStationaritySpec:
    uni = cfg["universe"]
    ns = cfg["nonstat"]
    try:
        universe = envgen.build_universe(uni["l_max"], uni["m_max"])
        seed = ns["seed"] if ns["seed"] is not None else cfg["seed"]
        return envgen.sample_subset(universe, ns["k"], seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def train_config(cfg: dict) -> nn.TrainConfig:
    t = cfg["train"]
    try:
        return nn.TrainConfig(
            batch_size=t["batch_size"], max_epochs=t["max_epochs"],
            min_delta=t["min_delta"],
            patience=min(t["patience"], t["max_epochs"]),
            adam=nn.AdamParams(lr=t["lr"], beta1=t["beta1"], beta2=t["beta2"],
                               eps=t["adam_eps"]),
            seed=t["seed"] if t["seed"] is not None else cfg["seed"])
    except ValueError as exc:
        raise ConfigError(f"invalid train section: {exc}") from exc


def dqn_config(cfg: dict) -> dqn.DqnConfig:
    d = cfg["dqn"]
    try:
        return dqn.DqnConfig(
            discount=d["discount"], lr=d["lr"], actions=d["actions"],
            delta=d["delta"], steps_per_episode=d["steps_per_episode"],
            warmup_episodes=d["warmup_episodes"], init_mode=d["init_mode"],
            kb_capacity=d["kb_capacity"], batch_size=d["batch_size"],
            epsilon=dqn.EpsilonSchedule(start=d["eps_start"], end=d["eps_end"],
                                        anneal_episodes=d["anneal_episodes"]),
            seed=cfg["seed"])
    except ValueError as exc:
        raise ConfigError(f"invalid dqn section: {exc}") from exc
