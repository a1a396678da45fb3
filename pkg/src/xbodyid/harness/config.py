"""Declarative run configuration: file sections plus flag overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from ..data.synth import SyntheticConfig
from ..eval.protocol import ProtocolConfig
from ..model.lora import LoraConfig
from ..model.vit import ModelConfig
from ..training.trainer import TrainConfig

SECTIONS = ("synth", "model", "train", "protocol", "lora")

# Defaults sized for a single CPU: a shallow backbone at the full 768-d width.
DEFAULTS: dict = {
    "seed": 0,
    "synth": {"n_subjects": 20, "images_per_subject_per_domain": 4},
    "model": {"depth": 2, "heads": 12},
    "train": {"epochs": 5, "lr": 2e-4, "warmup_steps": 10, "margin": 1.0, "head_lr_scale": 10.0,
              "batch": {"P": 4, "K": 4}},
    "protocol": {},
    "lora": None,
}


def load_config_file(path) -> dict:
    path = Path(path)
    text = path.read_text()
    data = yaml.safe_load(text) if path.suffix in (".yaml", ".yml") else json.loads(text)
    if not isinstance(data, dict):
        raise ValueError(f"config {path} must be a mapping")
    unknown = set(data) - set(SECTIONS) - {"seed", "run_id", "data", "command", "extra"}
    if unknown:
        raise ValueError(f"unknown config sections {sorted(unknown)}")
    return data


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def set_key(cfg: dict, dotted: str, value: Any) -> None:
    """Override one key, e.g. ``set_key(cfg, "train.batch.P", 8)``."""
    node = cfg
    *parents, leaf = dotted.split(".")
    for p in parents:
        if node.get(p) is None:
            node[p] = {}
        node = node[p]
    node[leaf] = value


@dataclass
class RunConfig:
    seed: int = 0
    synth: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    protocol: dict = field(default_factory=dict)
    lora: Optional[dict] = None
    data: Optional[str] = None

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = deep_merge(DEFAULTS, d)
        return cls(seed=int(d["seed"]), synth=d["synth"], model=d["model"], train=d["train"],
                   protocol=d["protocol"], lora=d.get("lora"), data=d.get("data"))

    def to_dict(self) -> dict:
        return {"seed": self.seed, "synth": self.synth, "model": self.model, "train": self.train,
                "protocol": self.protocol, "lora": self.lora, "data": self.data}

    # typed views; the run seed feeds every seeded component unless set explicitly
    def synthetic(self) -> SyntheticConfig:
        return SyntheticConfig(**{"seed": self.seed, **self.synth})

    def model_config(self, n_classes: int) -> ModelConfig:
        return ModelConfig(**{**self.model, "n_classes": n_classes})

    def train_config(self) -> TrainConfig:
        t = copy.deepcopy(self.train)
        t.setdefault("seed", self.seed)
        t.setdefault("batch", {})
        t["batch"].setdefault("seed", self.seed)
        if self.lora:
            t["lora"] = LoraConfig(**self.lora)
        return TrainConfig(**t)

    def protocol_config(self) -> ProtocolConfig:
        return ProtocolConfig(**self.protocol)
