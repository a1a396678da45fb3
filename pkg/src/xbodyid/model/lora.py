"""Low-rank adapters on the attention projections."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .vit import Attention

TARGETS = ("q", "k", "v", "o")


@dataclass
class LoraConfig:
    rank: int = 8
    alpha: float = 16.0
    targets: tuple = TARGETS

    def __post_init__(self):
        self.targets = tuple(self.targets)
        if self.rank < 1:
            raise ValueError("LoRA rank must be positive")
        bad = set(self.targets) - set(TARGETS)
        if bad:
            raise ValueError(f"unknown LoRA targets {sorted(bad)}")

    def to_json(self) -> dict:
        d = asdict(self)
        d["targets"] = list(self.targets)
        return d


class LoRALinear(nn.Module):
    """y = base(x) + (alpha / r) * x A^T B^T, base frozen, B zero at start."""

    def __init__(self, base: nn.Linear, rank: int, alpha: float):
        super().__init__()
        self.base = base
        self.rank = rank
        self.scaling = alpha / rank
        ref = base.weight
        self.lora_A = nn.Parameter(torch.empty(rank, base.in_features, dtype=ref.dtype, device=ref.device))
        self.lora_B = nn.Parameter(torch.zeros(base.out_features, rank, dtype=ref.dtype, device=ref.device))
        nn.init.kaiming_uniform_(self.lora_A, a=math.sqrt(5))

    def forward(self, x):
        return self.base(x) + ((x @ self.lora_A.T) @ self.lora_B.T) * self.scaling

    def merged(self) -> nn.Linear:
        out = nn.Linear(self.base.in_features, self.base.out_features, bias=self.base.bias is not None,
                        dtype=self.base.weight.dtype, device=self.base.weight.device)
        with torch.no_grad():
            out.weight.copy_(self.base.weight + self.scaling * (self.lora_B @ self.lora_A))
            if self.base.bias is not None:
                out.bias.copy_(self.base.bias)
        return out


def apply_lora(model: nn.Module, cfg: LoraConfig) -> nn.Module:
    """Wrap the targeted projections of every attention layer in place and
    freeze everything except the adapter factors."""
    dim = model.cfg.embed_dim
    if cfg.rank >= dim:
        raise ValueError(f"LoRA rank {cfg.rank} must be below embed_dim {dim}")
    for p in model.parameters():
        p.requires_grad_(False)
    for m in model.modules():
        if isinstance(m, Attention):
            for name in cfg.targets:
                lin = getattr(m, name)
                if not isinstance(lin, LoRALinear):
                    setattr(m, name, LoRALinear(lin, cfg.rank, cfg.alpha))
    model.lora_config = cfg
    return model


def merge_lora(model: nn.Module) -> nn.Module:
    for m in model.modules():
        if isinstance(m, Attention):
            for name in TARGETS:
                lin = getattr(m, name)
                if isinstance(lin, LoRALinear):
                    setattr(m, name, lin.merged())
    for p in model.parameters():
        p.requires_grad_(True)
    model.lora_config = None
    return model


def lora_parameters(model: nn.Module) -> list[nn.Parameter]:
    return [p for n, p in model.named_parameters() if "lora_" in n]


def has_lora(model: nn.Module) -> bool:
    return any(isinstance(m, LoRALinear) for m in model.modules())
