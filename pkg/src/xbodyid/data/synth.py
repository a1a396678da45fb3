"""Procedural multi-domain body images.

Every subject gets a fixed body geometry and clothing scheme drawn from
``(seed, subject index)``. Each image re-renders that scene with small pose
and lighting jitter and then applies a per-domain degradation: VIS stays in
colour, SWIR is greyscale with mild blur, MWIR/LWIR are contrast-inverted
greyscale (warm body on a cold background) with increasing blur and noise.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image, ImageFilter

from .manifest import DOMAINS, DatasetManifest, ImageRecord, save_manifest


@dataclass(frozen=True)
class DomainDegradation:
    blur_radius: float = 0.0
    contrast_scale: float = 1.0
    channel_policy: str = "color"  # color | gray | inverted
    noise_sigma: float = 0.0


def default_degradations() -> dict[str, DomainDegradation]:
    return {
        "VIS": DomainDegradation(0.0, 1.0, "color", 0.01),
        "SWIR": DomainDegradation(1.0, 0.9, "gray", 0.02),
        "MWIR": DomainDegradation(2.0, 1.0, "inverted", 0.04),
        "LWIR": DomainDegradation(3.0, 0.9, "inverted", 0.06),
    }


@dataclass
class SyntheticConfig:
    n_subjects: int = 20
    images_per_subject_per_domain: int = 4
    image_height: int = 384
    image_width: int = 128
    seed: int = 0
    n_test_subjects: Optional[int] = None
    patch_size: int = 16
    domain_degradations: dict[str, DomainDegradation] = field(default_factory=default_degradations)

    def __post_init__(self):
        self.domain_degradations = {
            k: v if isinstance(v, DomainDegradation) else DomainDegradation(**v)
            for k, v in self.domain_degradations.items()
        }
        self.validate()

    @property
    def test_subjects(self) -> int:
        if self.n_test_subjects is not None:
            return self.n_test_subjects
        return max(1, self.n_subjects // 3)

    def validate(self):
        if self.n_subjects < 2:
            raise ValueError("n_subjects must be at least 2")
        if self.images_per_subject_per_domain < 1:
            raise ValueError("images_per_subject_per_domain must be positive")
        for name in ("image_height", "image_width"):
            v = getattr(self, name)
            if v <= 0 or v % self.patch_size:
                raise ValueError(f"{name}={v} must be a positive multiple of patch size {self.patch_size}")
        if not 0 <= self.test_subjects < self.n_subjects:
            raise ValueError("n_test_subjects must leave at least one training subject")
        missing = set(DOMAINS) - set(self.domain_degradations)
        if missing:
            raise ValueError(f"no degradation given for {sorted(missing)}")
        for d in self.domain_degradations.values():
            if d.channel_policy not in ("color", "gray", "inverted"):
                raise ValueError(f"unknown channel policy {d.channel_policy!r}")

    def to_json(self) -> dict:
        out = asdict(self)
        out["domain_degradations"] = {k: asdict(v) for k, v in self.domain_degradations.items()}
        return out


def subject_id(index: int) -> str:
    return f"S{index:04d}"


_LUMA = np.array([0.299, 0.587, 0.114])


def _colour(rng: np.random.Generator) -> np.ndarray:
    """Random hue at a uniformly drawn luminance, so garments also differ in grey level."""
    c = rng.uniform(0.0, 1.0, size=3)
    return np.clip(c - c @ _LUMA + rng.uniform(0.08, 0.92), 0.0, 1.0)


def _subject_params(seed: int, index: int) -> dict:
    rng = np.random.default_rng([seed, index, 0])
    u = rng.uniform
    return {
        "head_rx": u(0.06, 0.15), "head_ry": u(0.035, 0.06), "neck_w": u(0.04, 0.09),
        "shoulder_w": u(0.20, 0.46), "waist_w": u(0.12, 0.34), "torso_end": u(0.50, 0.65),
        "arm_w": u(0.04, 0.08), "arm_len": u(0.38, 0.62), "leg_w": u(0.05, 0.16),
        "leg_gap": u(0.0, 0.14), "leg_end": u(0.90, 0.98),
        "skin": u(0.45, 0.95, size=3) * np.array([1.0, 0.8, 0.7]),
        "upper": _colour(rng), "lower": _colour(rng),
        "stripe_period": u(0.03, 0.12), "stripe_amp": u(0.25, 0.7), "stripe_vertical": bool(rng.integers(2)),
        "belt": u(0.0, 1.0),
        # exposed skin shows up strongly in every band
        "sleeve": u(0.15, 1.0), "trouser": u(0.3, 1.0), "hat": u(0.0, 1.0),
    }


def _render_scene(p: dict, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """Render one jittered VIS scene as float RGB in [0, 1]."""
    dy, dx = rng.normal(0, 0.008), rng.normal(0, 0.02)
    s = 1.0 + rng.normal(0, 0.015)
    ys = (np.arange(h)[:, None] + 0.5) / h
    xs = (np.arange(w)[None, :] + 0.5) / w
    y = (ys - dy) / s
    x = (xs - 0.5 - dx) / s  # horizontal offset from the body axis

    head_cy = 0.02 + p["head_ry"] * 1.4
    head = ((x / (p["head_rx"] / 2)) ** 2 + ((y - head_cy) / p["head_ry"]) ** 2) <= 1.0
    neck_top = head_cy + p["head_ry"] * 0.8
    neck = (np.abs(x) <= p["neck_w"] / 2) & (y >= neck_top) & (y <= 0.175)
    t = np.clip((y - 0.175) / (p["torso_end"] - 0.175), 0, 1)
    half = (p["shoulder_w"] * (1 - t) + p["waist_w"] * t) / 2
    torso = (np.abs(x) <= half) & (y >= 0.175) & (y <= p["torso_end"])
    arm_x = p["shoulder_w"] / 2 + p["arm_w"] / 2 + 0.01
    arms = (np.abs(np.abs(x) - arm_x) <= p["arm_w"] / 2) & (y >= 0.18) & (y <= 0.18 + p["arm_len"] * 0.5)
    hands = (np.abs(np.abs(x) - arm_x) <= p["arm_w"] / 2) & (y > 0.18 + p["arm_len"] * 0.5) \
        & (y <= 0.2 + p["arm_len"] * 0.5 + 0.02)
    leg_x = p["leg_gap"] / 2 + p["leg_w"] / 2
    legs = (np.abs(np.abs(x) - leg_x) <= p["leg_w"] / 2) & (y > p["torso_end"] - 0.01) & (y <= p["leg_end"])
    belt = (y >= p["torso_end"] - 0.02) & (y <= p["torso_end"]) & torso & (p["belt"] > 0.5)

    # background: light, smoothly varying
    base = rng.uniform(0.7, 0.9)
    tint = rng.uniform(-0.05, 0.05, size=3)
    grad = rng.uniform(-0.1, 0.1) * (ys - 0.5)
    img = np.broadcast_to(base + grad, (h, w))[..., None] + tint
    img = np.array(img, dtype=np.float64)

    phase = rng.uniform(0, 1)
    coord = x if p["stripe_vertical"] else y
    stripes = 1.0 - p["stripe_amp"] * (np.sin(2 * np.pi * (coord / p["stripe_period"] + phase)) > 0)
    stripes = np.broadcast_to(stripes, (h, w))
    gain = rng.uniform(0.9, 1.1)
    img[legs] = p["lower"] * gain
    img[torso | arms] = (p["upper"] * gain)[None, :] * stripes[torso | arms][:, None]
    img[belt] = 0.1
    arm_top, leg_top = 0.18, p["torso_end"] - 0.01
    bare_arms = arms & (y > arm_top + p["sleeve"] * p["arm_len"] * 0.5)
    bare_legs = legs & (y > leg_top + p["trouser"] * (p["leg_end"] - leg_top))
    img[head | neck | hands | bare_arms | bare_legs] = p["skin"] * gain
    if p["hat"] > 0.5:
        img[head & (y < head_cy - p["head_ry"] * 0.2)] = p["lower"] * gain
    return np.clip(img, 0.0, 1.0)


def _degrade(img: np.ndarray, deg: DomainDegradation, rng: np.random.Generator) -> np.ndarray:
    if deg.channel_policy == "color":
        out = img
    else:
        gray = img @ _LUMA
        if deg.channel_policy == "inverted":
            gray = 1.0 - gray
        out = np.repeat(gray[..., None], 3, axis=2)
    out = 0.5 + deg.contrast_scale * (out - 0.5)
    if deg.blur_radius > 0:
        pil = Image.fromarray(np.round(np.clip(out, 0, 1) * 255).astype(np.uint8))
        pil = pil.filter(ImageFilter.GaussianBlur(deg.blur_radius))
        out = np.asarray(pil, dtype=np.float64) / 255.0
    if deg.noise_sigma > 0:
        out = out + rng.normal(0, deg.noise_sigma, size=out.shape[:2])[..., None]
    return np.round(np.clip(out, 0, 1) * 255).astype(np.uint8)


def render_subject(cfg: SyntheticConfig, index: int) -> dict[str, list[np.ndarray]]:
    """All images of one subject keyed by domain; depends only on (seed, index)."""
    params = _subject_params(cfg.seed, index)
    out = {}
    for di, domain in enumerate(DOMAINS):
        rng = np.random.default_rng([cfg.seed, index, 1, di])
        imgs = []
        for _ in range(cfg.images_per_subject_per_domain):
            scene = _render_scene(params, cfg.image_height, cfg.image_width, rng)
            imgs.append(_degrade(scene, cfg.domain_degradations[domain], rng))
        out[domain] = imgs
    return out


def generate_synthetic_dataset(cfg: SyntheticConfig, out_dir) -> DatasetManifest:
    """Write images plus ``manifest.jsonl`` under ``out_dir``; returns the manifest."""
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_train = cfg.n_subjects - cfg.test_subjects
    records = []
    for idx in range(cfg.n_subjects):
        sid = subject_id(idx)
        split = "train" if idx < n_train else "test"
        subj_dir = out_dir / "images" / sid
        subj_dir.mkdir(parents=True, exist_ok=True)
        for domain, imgs in render_subject(cfg, idx).items():
            for k, arr in enumerate(imgs):
                rel = Path("images") / sid / f"{domain}_{k:03d}.png"
                Image.fromarray(arr).save(out_dir / rel, format="PNG")
                records.append(ImageRecord(
                    subject_id=sid, domain=domain, template_id=f"{sid}_{domain}",
                    media_id=f"{sid}_{domain}_{k:03d}", image_path=rel.as_posix(), split=split,
                ))
    manifest = DatasetManifest(records, root=out_dir)
    save_manifest(manifest, out_dir / "manifest.jsonl")
    (out_dir / "synth_config.json").write_text(json.dumps(cfg.to_json(), indent=2, sort_keys=True))
    return manifest
