"""Versioned checkpoints carrying model and adapter configuration."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import torch

from .lora import LoraConfig, apply_lora, has_lora
from .vit import BodyIdNet, ModelConfig

CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, model: BodyIdNet, extra: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lora_cfg = getattr(model, "lora_config", None) if has_lora(model) else None
    payload = {
        "version": CHECKPOINT_VERSION,
        "model_config": model.cfg.to_json(),
        "lora_config": lora_cfg.to_json() if lora_cfg is not None else None,
        "state_dict": model.state_dict(),
        "extra": extra or {},
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path, expect_model: Optional[ModelConfig] = None,
                    expect_lora: Optional[LoraConfig] = None) -> tuple[BodyIdNet, dict]:
    """Rebuild the model from a checkpoint; mismatched expectations raise."""
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('version')}")
    cfg = ModelConfig(**payload["model_config"])
    if expect_model is not None and expect_model.to_json() != cfg.to_json():
        raise CheckpointError(f"model config mismatch: checkpoint {cfg.to_json()} vs expected {expect_model.to_json()}")
    lora = LoraConfig(**payload["lora_config"]) if payload["lora_config"] else None
    if expect_lora is not None and (lora is None or lora.to_json() != expect_lora.to_json()):
        raise CheckpointError("LoRA config mismatch")
    model = BodyIdNet(cfg, init=False)
    if lora is not None:
        apply_lora(model, lora)
    try:
        model.load_state_dict(payload["state_dict"])
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint weights do not fit config: {exc}") from None
    model.eval()
    return model, payload.get("extra", {})
