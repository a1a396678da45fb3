"""Patch-token transformer with a global token and three region tokens."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

REGIONS = ("face", "torso", "lower")


class ModelError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    image_height: int = 384
    image_width: int = 128
    patch_size: int = 16
    in_chans: int = 3
    embed_dim: int = 768
    depth: int = 12
    heads: int = 12
    mlp_ratio: float = 4.0
    n_classes: int = 2
    # half-open patch-row ranges for face / torso / lower body; None scales
    # the 4/10/10 split of a 24-row grid to the actual grid height
    region_rows: Optional[tuple] = None
    fusion_hidden: Optional[int] = None

    def __post_init__(self):
        if self.region_rows is None:
            gh = self.image_height // self.patch_size
            a, b = max(1, round(gh / 6)), round(gh * 14 / 24)
            b = min(max(b, a + 1), gh - 1)
            self.region_rows = ((0, a), (a, b), (b, gh))
        self.region_rows = tuple(tuple(int(v) for v in r) for r in self.region_rows)
        self.validate()

    @property
    def grid(self) -> tuple[int, int]:
        return self.image_height // self.patch_size, self.image_width // self.patch_size

    @property
    def n_patches(self) -> int:
        gh, gw = self.grid
        return gh * gw

    @property
    def n_tokens(self) -> int:
        return self.n_patches + 1 + len(REGIONS)

    @property
    def feature_dim(self) -> int:
        return 2 * self.embed_dim

    def validate(self):
        p = self.patch_size
        if self.image_height % p or self.image_width % p:
            raise ValueError(f"image {self.image_height}x{self.image_width} not divisible by patch {p}")
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if len(self.region_rows) != 3:
            raise ValueError("need exactly three region row ranges")
        rows = []
        for lo, hi in self.region_rows:
            if not lo < hi:
                raise ValueError(f"empty region range {(lo, hi)}")
            rows.extend(range(lo, hi))
        if sorted(rows) != list(range(self.grid[0])):
            raise ValueError(f"region rows {self.region_rows} must be disjoint and cover {self.grid[0]} patch rows")
        if self.n_classes < 1:
            raise ValueError("n_classes must be positive")

    def to_json(self) -> dict:
        d = asdict(self)
        d["region_rows"] = [list(r) for r in self.region_rows]
        return d


@dataclass
class RegionMask:
    region: str
    patch_indices: frozenset

    def __post_init__(self):
        if self.region not in REGIONS:
            raise ValueError(f"unknown region {self.region!r}")
        if not self.patch_indices:
            raise ValueError(f"region {self.region} has no patches")


def region_masks(cfg: ModelConfig) -> list[RegionMask]:
    _, gw = cfg.grid
    return [
        RegionMask(name, frozenset(range(lo * gw, hi * gw)))
        for name, (lo, hi) in zip(REGIONS, cfg.region_rows)
    ]


def build_attention_mask(cfg: ModelConfig, isolate_regions: bool = False) -> torch.Tensor:
    """Boolean (T, T) mask, True where query row may attend to key column.

    Token order is [global, face, torso, lower, patches...]. The global token
    sees everything. A region token sees itself, its region's patches and the
    global token. A patch sees its own region's patches, its region token and
    the global token, so the global token is the only path between regions.
    ``isolate_regions`` also cuts every edge into the global token, which makes
    each region branch depend on its own patches only.
    """
    T, n_special = cfg.n_tokens, 1 + len(REGIONS)
    allowed = torch.zeros(T, T, dtype=torch.bool)
    allowed[0, :] = True
    for r, rm in enumerate(region_masks(cfg)):
        tok = 1 + r
        cols = torch.tensor(sorted(rm.patch_indices)) + n_special
        allowed[tok, tok] = True
        allowed[tok, cols] = True
        allowed[cols.unsqueeze(1), cols.unsqueeze(0)] = True
        allowed[cols, tok] = True
    if not isolate_regions:
        allowed[:, 0] = True
    return allowed


class PatchEmbed(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.proj = nn.Conv2d(cfg.in_chans, cfg.embed_dim, kernel_size=cfg.patch_size, stride=cfg.patch_size)

    def forward(self, x):
        c, h, w = self.cfg.in_chans, self.cfg.image_height, self.cfg.image_width
        if x.dim() != 4 or tuple(x.shape[1:]) != (c, h, w):
            raise ValueError(f"expected images of shape (B, {c}, {h}, {w}), got {tuple(x.shape)}")
        return self.proj(x).flatten(2).transpose(1, 2)


class Attention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.o = nn.Linear(dim, dim)

    def forward(self, x, mask):
        B, T, D = x.shape
        h = self.heads

        def split(t):
            return t.view(B, T, h, D // h).transpose(1, 2)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(D // h)
        scores = scores.masked_fill(~mask, float("-inf"))
        out = scores.softmax(dim=-1) @ v
        return self.o(out.transpose(1, 2).reshape(B, T, D))


class Block(nn.Module):
    def __init__(self, dim, heads, mlp_ratio):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x, mask):
        x = x + self.attn(self.norm1(x), mask)
        return x + self.mlp(self.norm2(x))


class FusionFFN(nn.Module):
    """Residual two-layer map over the global/local concatenation."""

    def __init__(self, dim: int, hidden: Optional[int] = None):
        super().__init__()
        self.dim = dim
        hidden = hidden or dim
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return x + self.fc2(F.gelu(self.fc1(x)))


def average_local(z_face, z_torso, z_lower):
    if not (z_face.shape == z_torso.shape == z_lower.shape):
        raise ValueError(f"local feature shapes differ: {z_face.shape}, {z_torso.shape}, {z_lower.shape}")
    return (z_face + z_torso + z_lower) / 3


def fuse(fusion: FusionFFN, z_global, z_local):
    if z_global.shape != z_local.shape:
        raise ValueError(f"global {tuple(z_global.shape)} and local {tuple(z_local.shape)} differ")
    z = torch.cat([z_global, z_local], dim=-1)
    if z.shape[-1] != fusion.dim:
        raise ValueError(f"fusion expects dim {fusion.dim}, got {z.shape[-1]}")
    return fusion(z)


@dataclass
class FeatureBundle:
    z_global: torch.Tensor
    z_face: torch.Tensor
    z_torso: torch.Tensor
    z_lower: torch.Tensor
    z_local: torch.Tensor
    z_final: torch.Tensor

    def region(self, name: str) -> torch.Tensor:
        return getattr(self, f"z_{name}")


class BodyIdNet(nn.Module):
    def __init__(self, cfg: ModelConfig, init: bool = True):
        super().__init__()
        self.cfg = cfg
        D = cfg.embed_dim
        self.patch_embed = PatchEmbed(cfg)
        self.global_token = nn.Parameter(torch.zeros(1, 1, D))
        self.local_tokens = nn.Parameter(torch.zeros(1, len(REGIONS), D))
        self.pos_embed = nn.Parameter(torch.zeros(1, cfg.n_tokens, D))
        self.blocks = nn.ModuleList(Block(D, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.depth))
        self.norm = nn.LayerNorm(D)
        self.fusion = FusionFFN(cfg.feature_dim, cfg.fusion_hidden)
        self.classifier = nn.Linear(cfg.feature_dim, cfg.n_classes)
        self.register_buffer("attn_mask", build_attention_mask(cfg), persistent=False)
        self.register_buffer("isolated_mask", build_attention_mask(cfg, isolate_regions=True), persistent=False)
        self.initialized = False
        if init:
            self.init_weights()

    def init_weights(self):
        for m in self.modules():
            if isinstance(m, (nn.Linear, nn.Conv2d)):
                nn.init.trunc_normal_(m.weight, std=0.02)
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
            elif isinstance(m, nn.LayerNorm):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)
        for p in (self.global_token, self.local_tokens, self.pos_embed):
            nn.init.trunc_normal_(p, std=0.02)
        self.initialized = True

    def load_state_dict(self, state_dict, strict: bool = True, assign: bool = False):
        out = super().load_state_dict(state_dict, strict=strict)
        self.initialized = True
        return out

    def tokens(self, images):
        """Token sequence [global; face; torso; lower; patches] with positions added."""
        patches = self.patch_embed(images)
        B = patches.shape[0]
        special = torch.cat([self.global_token, self.local_tokens], dim=1).expand(B, -1, -1)
        return torch.cat([special, patches], dim=1) + self.pos_embed

    def encode(self, images, isolate_regions: bool = False):
        if not self.initialized:
            raise ModelError("model weights are not initialised; call init_weights() or load a checkpoint")
        x = self.tokens(images)
        mask = self.isolated_mask if isolate_regions else self.attn_mask
        for blk in self.blocks:
            x = blk(x, mask)
        return self.norm(x[:, : 1 + len(REGIONS)])

    def forward(self, images, regions: Sequence[str] = REGIONS, isolate_regions: bool = False) -> FeatureBundle:
        head = self.encode(images, isolate_regions=isolate_regions)
        z_global, z_face, z_torso, z_lower = head.unbind(dim=1)
        z_local = self.combine_local({"face": z_face, "torso": z_torso, "lower": z_lower}, regions)
        return FeatureBundle(
            z_global=z_global, z_face=z_face, z_torso=z_torso, z_lower=z_lower,
            z_local=z_local, z_final=fuse(self.fusion, z_global, z_local),
        )

    @staticmethod
    def combine_local(parts: dict, regions: Sequence[str] = REGIONS):
        regions = tuple(regions)
        if not regions:
            raise ValueError("at least one local region is required")
        unknown = set(regions) - set(REGIONS)
        if unknown:
            raise ValueError(f"unknown regions {sorted(unknown)}")
        if len(regions) == 3 and set(regions) == set(REGIONS):
            return average_local(parts["face"], parts["torso"], parts["lower"])
        return sum(parts[r] for r in regions) / len(regions)

    def refuse(self, bundle: FeatureBundle, regions: Sequence[str]) -> torch.Tensor:
        """z_final recomputed with z_local averaged over ``regions`` only."""
        parts = {r: bundle.region(r) for r in REGIONS}
        return fuse(self.fusion, bundle.z_global, self.combine_local(parts, regions))

    def classify(self, z_final):
        return self.classifier(z_final)
