"""Model, loss, training and run configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Any


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    image_size: tuple[int, int] = (64, 64)
    num_classes: int = 4
    num_scales: int = 3
    channels: tuple[int, ...] = (16, 32, 64)
    stem_channels: tuple[int, int] = (8, 16)
    queries: int = 4
    embed_dim: int = 32
    decoder_rounds: int = 2

    def __post_init__(self):
        if isinstance(self.image_size, int):
            self.image_size = (self.image_size, self.image_size)
        self.image_size = tuple(self.image_size)
        self.channels = tuple(self.channels)
        self.stem_channels = tuple(self.stem_channels)
        self.validate()

    def validate(self) -> None:
        h, w = self.image_size
        L = self.num_scales
        if L < 2:
            raise ConfigError(f"num_scales must be >= 2, got {L}")
        if h % 2 ** (L + 1) or w % 2 ** (L + 1):
            raise ConfigError(f"image_size {h}x{w} not divisible by 2^{L + 1}")
        if len(self.channels) != L:
            raise ConfigError(f"channels needs {L} entries, got {len(self.channels)}")
        if len(self.stem_channels) != 2:
            raise ConfigError("stem_channels needs exactly 2 entries")
        if self.queries != self.num_classes:
            raise ConfigError("queries must equal num_classes (query k predicts class k)")
        if self.num_classes < 2 or self.num_classes > 256:
            raise ConfigError(f"num_classes must be in [2, 256], got {self.num_classes}")
        if self.decoder_rounds < 1:
            raise ConfigError("decoder_rounds must be >= 1")
        if min(self.channels + self.stem_channels) < 1 or self.embed_dim < 1:
            raise ConfigError("widths must be positive")

    def scale_dims(self) -> list[tuple[int, int]]:
        h, w = self.image_size
        return [(h // 2 ** (l + 1), w // 2 ** (l + 1)) for l in range(1, self.num_scales + 1)]


@dataclass
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"{f.name} must be non-negative, got {getattr(self, f.name)}")


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 30
    batch_size: int = 8
    lr: float = 1e-3
    lr_decay_every: int = 0  # epochs; 0 keeps the rate constant
    lr_decay_factor: float = 0.5
    grad_clip: float = 10.0  # global norm; 0 disables
    augment: bool = True
    data_dir: str = "data"
    out_dir: str = "runs/default"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass
class DatasetConfig:
    seed: int = 0
    image_size: tuple[int, int] = (64, 64)
    num_classes: int = 4
    train_size: int = 200
    val_size: int = 50
    test_size: int = 50
    data_dir: str = "data"

    def __post_init__(self):
        if isinstance(self.image_size, int):
            self.image_size = (self.image_size, self.image_size)
        self.image_size = tuple(self.image_size)
        if min(self.train_size, self.val_size, self.test_size) < 1:
            raise ConfigError("split sizes must be >= 1")
        if self.num_classes != 4:
            raise ConfigError("the synthetic scene generator produces exactly 4 classes")

    def splits(self) -> dict[str, int]:
        return {"train": self.train_size, "val": self.val_size, "test": self.test_size}


# JSON key -> (section, field).  Keys shared by several sections fan out.
RUN_KEYS: dict[str, list[tuple[str, str]]] = {
    "seed": [("train", "seed"), ("data", "seed")],
    "image_size": [("model", "image_size"), ("data", "image_size")],
    "num_classes": [("model", "num_classes"), ("data", "num_classes")],
    "num_scales": [("model", "num_scales")],
    "channels": [("model", "channels")],
    "stem_channels": [("model", "stem_channels")],
    "queries": [("model", "queries")],
    "embed_dim": [("model", "embed_dim")],
    "decoder_rounds": [("model", "decoder_rounds")],
    "lambda1": [("loss", "lambda1")],
    "lambda2": [("loss", "lambda2")],
    "lambda3": [("loss", "lambda3")],
    "lr": [("train", "lr")],
    "lr_decay_every": [("train", "lr_decay_every")],
    "lr_decay_factor": [("train", "lr_decay_factor")],
    "grad_clip": [("train", "grad_clip")],
    "augment": [("train", "augment")],
    "epochs": [("train", "epochs")],
    "batch_size": [("train", "batch_size")],
    "train_size": [("data", "train_size")],
    "val_size": [("data", "val_size")],
    "test_size": [("data", "test_size")],
    "data_dir": [("train", "data_dir"), ("data", "data_dir")],
    "out_dir": [("train", "out_dir")],
}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DatasetConfig = field(default_factory=DatasetConfig)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "RunConfig":
        sections: dict[str, dict[str, Any]] = {"model": {}, "loss": {}, "train": {}, "data": {}}
        for key, value in raw.items():
            if key not in RUN_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            for section, name in RUN_KEYS[key]:
                sections[section][name] = value
        if "num_classes" in raw and "queries" not in raw:
            sections["model"]["queries"] = raw["num_classes"]
        try:
            return cls(
                model=ModelConfig(**sections["model"]),
                loss=LossWeights(**sections["loss"]),
                train=TrainConfig(**sections["train"]),
                data=DatasetConfig(**sections["data"]),
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(raw)

    def to_dict(self) -> dict[str, Any]:
        sections = {"model": asdict(self.model), "loss": asdict(self.loss),
                    "train": asdict(self.train), "data": asdict(self.data)}
        out = {}
        for key, targets in RUN_KEYS.items():
            section, name = targets[0]
            value = sections[section][name]
            out[key] = list(value) if isinstance(value, tuple) else value
        return out
