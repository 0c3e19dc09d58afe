"""Experiment configuration files (YAML).

Example::

    corpus: data/yo5k
    output_dir: runs/yo-5k
    theta: 0.5
    seeds: [0, 1, 2]
    features: {deltas: true}
    model: {channels: [64, 64, 64, 64], kernel_sizes: [5, 3, 3, 3], strides: [1, 2, 1, 1],
            keyword_dim: 32, attention_dim: 32, hidden_sizes: [64, 128]}
    train: {learning_rate: 1.0e-3, batch_size: 32, epochs: 100,
            augment: {n_time_masks: 2, max_time_mask_frames: 20}}

Relative paths resolve against the config file's directory.  ``model``
omits ``n_keywords`` and ``feature_dim``; both come from the corpus and the
feature configuration.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .features import AugmentPolicy, FeatureConfig
from .model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


@dataclass
class ExperimentConfig:
    corpus: Path
    output_dir: Path
    theta: float = 0.5
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    features: FeatureConfig = FeatureConfig()
    model: dict = field(default_factory=dict)
    train: TrainConfig = TrainConfig()

    def model_config(self, n_keywords: int) -> ModelConfig:
        return ModelConfig(n_keywords=n_keywords, feature_dim=self.features.dim, **self.model)


def _build(cls, data: Any, path: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}: unknown field")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


_MODEL_FIELDS = {"channels", "kernel_sizes", "strides", "keyword_dim", "attention_dim", "hidden_sizes"}


def parse_config(data: Any, base_dir: Path = Path(".")) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>: expected a mapping")
    unknown = sorted(set(data) - {"corpus", "output_dir", "theta", "seeds", "features", "model", "train"})
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown field")
    for key in ("corpus", "output_dir"):
        if not isinstance(data.get(key), str):
            raise ConfigError(f"{key}: required path is missing")
    corpus = base_dir / data["corpus"]
    if not corpus.exists():
        raise ConfigError(f"corpus: path does not exist: {corpus}")

    theta = data.get("theta", 0.5)
    if not isinstance(theta, (int, float)) or not 0 < theta < 1:
        raise ConfigError("theta: must be a number in (0, 1)")
    seeds = data.get("seeds", [0, 1, 2])
    if isinstance(seeds, int):
        seeds = [seeds]
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds: must be a non-empty list of integers")

    features = _build(FeatureConfig, data.get("features"), "features")
    model = data.get("model") or {}
    if not isinstance(model, dict):
        raise ConfigError("model: expected a mapping")
    bad = sorted(set(model) - _MODEL_FIELDS)
    if bad:
        raise ConfigError(f"model.{bad[0]}: unknown field")
    try:
        ModelConfig(n_keywords=1, feature_dim=features.dim, **model)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model: {exc}") from None

    train_raw = data.get("train") or {}
    if not isinstance(train_raw, dict):
        raise ConfigError("train: expected a mapping")
    train_raw = dict(train_raw)
    train_raw["augment"] = _build(AugmentPolicy, train_raw.get("augment", {}), "train.augment")
    if "betas" in train_raw:
        train_raw["betas"] = tuple(train_raw["betas"])
    if train_raw.get("init_checkpoint"):
        ckpt = base_dir / train_raw["init_checkpoint"]
        if not ckpt.exists():
            raise ConfigError(f"train.init_checkpoint: path does not exist: {ckpt}")
        train_raw["init_checkpoint"] = str(ckpt)
    train = _build(TrainConfig, train_raw, "train")
    return ExperimentConfig(corpus, base_dir / data["output_dir"], float(theta), seeds, features, model, train)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"<file>: config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"<file>: YAML parse error: {exc}") from None
    return parse_config(data, path.parent)
