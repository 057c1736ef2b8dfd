"""Run configuration: YAML file + dotted-path overrides, resolved and
persisted next to every command's outputs. Precedence: flags > file > defaults."""

from __future__ import annotations

import copy
from pathlib import Path

import yaml

from .losses import LossWeights, SsimParams
from .models import ClassifierSpec, DiscriminatorSpec, GeneratorSpec
from .training import TrainConfig


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "output_dir": "runs/default",
    "dataset": {
        "source": "synthetic",          # synthetic | manifest
        "n": 400,
        "size": 64,
        "manifest": None,
        "train_fraction": 0.7,
    },
    "classifier": {
        "blocks": [[32, 1], [64, 2], [128, 2], [256, 2]],
    },
    "generator": {
        "depth": 3,
        "convs_per_stage": 3,
        "stage_kernels": [48, 96, 192, 384],
    },
    "discriminator": {
        "tap_stages": [2, 3],
    },
    "train": {
        "batch_size": 16,
        "max_epochs": 50,
        "learning_rate": 2.0e-4,
        "betas": [0.5, 0.999],
        "convergence_window": 5,
        "convergence_rel_tol": 1.0e-3,
    },
    "weights": {
        "w_cycle": 1.0,
        "w_sim": 1.0,
        "w_adv": 1.0,
        "w_am": 1.0,
        "w_l1_in_cycle": 0.5,
    },
    "ssim": {
        "c1": 0.01,
        "c2": 0.03,
        "window": 7,
        "n_scales": 3,
    },
    "eval": {
        "n_boot": 1000,
        "threshold": 0.5,
    },
    "explain": {
        "gain": None,                   # null = auto (1 / p99 of |R|)
    },
    "classifier_checkpoint": None,
    "bundle_checkpoint": None,
}


def _merge(base: dict, update: dict, prefix="") -> dict:
    out = dict(base)
    for key, value in update.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config field: {path}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, prefix=path + ".")
        else:
            out[key] = value
    return out


def _apply_override(config: dict, dotted: str):
    if "=" not in dotted:
        raise ConfigError(f"override must look like key.path=value: {dotted!r}")
    key, _, raw = dotted.partition("=")
    value = yaml.safe_load(raw)
    parts = key.strip().split(".")
    node = config
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config field: {key}")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config field: {key}")
    node[parts[-1]] = value


def load_config(path=None, overrides=()) -> dict:
    config = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        loaded = yaml.safe_load(path.read_text()) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        config = _merge(config, loaded)
    for item in overrides:
        _apply_override(config, item)
    validate_config(config)
    return config


def validate_config(config: dict):
    ds = config["dataset"]
    if ds["source"] not in ("synthetic", "manifest"):
        raise ConfigError("dataset.source must be 'synthetic' or 'manifest'")
    if ds["source"] == "manifest" and not ds["manifest"]:
        raise ConfigError("dataset.manifest is required when source=manifest")
    if config["train"]["batch_size"] < 2:
        raise ConfigError("train.batch_size must be >= 2")
    if not 0 < ds["train_fraction"] < 1:
        raise ConfigError("dataset.train_fraction must be in (0,1)")


def save_resolved(config: dict, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "resolved_config.yaml"
    path.write_text(yaml.safe_dump(config, sort_keys=True))
    return path


def classifier_spec(config) -> ClassifierSpec:
    return ClassifierSpec(blocks=[tuple(b) for b in config["classifier"]["blocks"]])


def generator_spec(config) -> GeneratorSpec:
    g = config["generator"]
    return GeneratorSpec(depth=g["depth"], convs_per_stage=g["convs_per_stage"],
                         stage_kernels=list(g["stage_kernels"]))


def discriminator_spec(config) -> DiscriminatorSpec:
    return DiscriminatorSpec(backbone=generator_spec(config),
                             tap_stages=tuple(config["discriminator"]["tap_stages"]))


def train_config(config) -> TrainConfig:
    t = config["train"]
    return TrainConfig(
        batch_size=t["batch_size"],
        max_epochs=t["max_epochs"],
        learning_rate=t["learning_rate"],
        betas=tuple(t["betas"]),
        weights=LossWeights(**config["weights"]),
        ssim=SsimParams(**config["ssim"]),
        convergence_window=t["convergence_window"],
        convergence_rel_tol=t["convergence_rel_tol"],
        seed=config["seed"],
    )
