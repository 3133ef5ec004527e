"""Experiment configuration: one human-readable JSON file bundling the
network, augmentation, loss, and training sections plus data paths."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

from clearwave.augment import AugmentConfig
from clearwave.losses import LossWeights
from clearwave.net.checkpoint import _cfg_from_dict, _cfg_to_dict
from clearwave.net.model import NetConfig


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    lr_halve_every: int = 100_000
    total_steps: int = 700_000
    batch_size: int = 112
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    chunk_s: float = 1.0
    checkpoint_every: int = 1000

    def __post_init__(self):
        if min(self.lr, self.lr_halve_every, self.total_steps, self.batch_size) <= 0:
            raise ValueError("training hyperparameters must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def desk_train_config(**overrides) -> TrainConfig:
    """Small-scale defaults for a single CPU; overrides win."""
    base = dict(total_steps=2000, batch_size=4, chunk_s=0.5, checkpoint_every=500)
    base.update(overrides)
    return TrainConfig(**base)


@dataclass(frozen=True)
class DataPaths:
    speech_dir: str = ""
    noise_dir: str = ""
    rir_dir: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DataPaths":
        return cls(**d)


@dataclass(frozen=True)
class ExperimentConfig:
    net: NetConfig = field(default_factory=NetConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=desk_train_config)
    data: DataPaths = field(default_factory=DataPaths)

    def save(self, path) -> None:
        doc = {
            "net": _cfg_to_dict(self.net),
            "augment": self.augment.to_dict(),
            "loss": self.loss.to_dict(),
            "train": self.train.to_dict(),
            "data": self.data.to_dict(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls(
            net=_cfg_from_dict(doc["net"]),
            augment=AugmentConfig.from_dict(doc["augment"]),
            loss=LossWeights.from_dict(doc["loss"]),
            train=TrainConfig.from_dict(doc["train"]),
            data=DataPaths.from_dict(doc.get("data", {})),
        )
