"""Run configuration: one flat key-value file fully specifying a run.

Configs are YAML mappings of scalars. Defaults are materialized into the
parsed config so the copy written into every output directory is
self-describing; reruns from that copy alone reproduce the run.
"""

from __future__ import annotations

import dataclasses
import os

import yaml

from .losses import LossConfig
from .trainer import TrainConfig

DEFAULTS = {
    "data": "",
    "objective": "lightccf",
    "encoder_layers": 0,
    "dim": 64,
    "lr": 1e-3,
    "epochs": 200,
    "patience": 10,
    "eval_interval": 5,
    "optimizer": "adam",
    "batch_size": 2048,
    "seed": 0,
    "tau": 0.2,
    "alpha": 1.0,
    "beta": 1e-4,
    "na_negatives": "other_items",
    "similarity": "cosine",
    "full_reg": False,
    "eval_ks": [10, 20],
    "grid_taus": [0.20, 0.22, 0.24, 0.26, 0.28, 0.30],
    "grid_alphas": [0.1, 0.5, 1.0, 2.5, 5.0, 10.0],
}


class ConfigError(ValueError):
    pass


def load_config(path: str, overrides: dict | None = None) -> dict:
    """Parse a config file, fill in defaults, and apply CLI overrides."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a key-value mapping")
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    cfg = dict(DEFAULTS)
    cfg.update(raw)
    if overrides:
        cfg.update({k: v for k, v in overrides.items() if v is not None})
    root = os.environ.get("LIGHTCCF_DATA_ROOT")
    if root and cfg["data"] and not os.path.isabs(cfg["data"]):
        cfg["data"] = os.path.join(root, cfg["data"])
    return cfg


def save_config(cfg: dict, path: str) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True)


def to_train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(
            objective=cfg["objective"],
            encoder_layers=int(cfg["encoder_layers"]),
            dim=int(cfg["dim"]),
            lr=float(cfg["lr"]),
            epochs=int(cfg["epochs"]),
            patience=int(cfg["patience"]),
            eval_interval=int(cfg["eval_interval"]),
            optimizer=cfg["optimizer"],
            batch_size=int(cfg["batch_size"]),
            seed=int(cfg["seed"]),
            eval_ks=tuple(int(k) for k in cfg["eval_ks"]),
            loss=LossConfig(
                tau=float(cfg["tau"]),
                alpha=float(cfg["alpha"]),
                beta=float(cfg["beta"]),
                na_negatives=cfg["na_negatives"],
                similarity=cfg["similarity"],
                full_reg=bool(cfg["full_reg"]),
            ),
        )
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc


def describe(cfg: TrainConfig) -> str:
    return " ".join(f"{k}={v}" for k, v in dataclasses.asdict(cfg).items())
