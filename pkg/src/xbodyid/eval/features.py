"""Feature extraction and the on-disk feature store."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import torch

from ..data.images import ImageCache
from ..data.manifest import DatasetManifest
from ..model.vit import REGIONS, BodyIdNet, fuse

PART_KEYS = ("z_global", "z_face", "z_torso", "z_lower")


@torch.no_grad()
def extract_parts(model: BodyIdNet, manifest: DatasetManifest, batch_size: int = 32,
                  images: Optional[ImageCache] = None) -> dict[str, dict[str, np.ndarray]]:
    """Global and per-region features for every record: media_id -> {key: vector}."""
    model.eval()
    images = images or ImageCache(manifest, model.cfg.image_height, model.cfg.image_width)
    out = {}
    n = len(manifest.records)
    for start in range(0, n, batch_size):
        idx = list(range(start, min(n, start + batch_size)))
        b = model(images.batch(idx))
        for j, i in enumerate(idx):
            mid = manifest.records[i].media_id
            out[mid] = {k: getattr(b, k)[j].double().numpy() for k in PART_KEYS}
            out[mid]["z_final"] = b.z_final[j].double().numpy()
    return out


@torch.no_grad()
def fuse_parts(model: BodyIdNet, parts: Mapping[str, Mapping[str, np.ndarray]],
               regions: Sequence[str] = REGIONS) -> dict[str, np.ndarray]:
    """z_final per media with z_local averaged over ``regions`` only."""
    ids = sorted(parts)
    dtype = next(model.parameters()).dtype
    stack = {k: torch.as_tensor(np.stack([parts[m][k] for m in ids]), dtype=dtype) for k in PART_KEYS}
    local = BodyIdNet.combine_local({r: stack[f"z_{r}"] for r in REGIONS}, regions)
    z = fuse(model.fusion, stack["z_global"], local)
    return {m: z[i].double().numpy() for i, m in enumerate(ids)}


def extract_features(model: BodyIdNet, manifest: DatasetManifest, batch_size: int = 32,
                     images: Optional[ImageCache] = None) -> dict[str, np.ndarray]:
    return {m: p["z_final"] for m, p in extract_parts(model, manifest, batch_size, images).items()}


def save_feature_store(path, features: Mapping[str, np.ndarray], manifest: DatasetManifest) -> Path:
    """Line-delimited records; ``.f32`` suffix writes the flat binary variant
    (little-endian float32, row-major) plus a ``.jsonl`` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    by_id = {r.media_id: r for r in manifest.records}
    ids = [r.media_id for r in manifest.records if r.media_id in features]
    meta = [{"media_id": m, "subject_id": by_id[m].subject_id, "domain": by_id[m].domain,
             "template_id": by_id[m].template_id} for m in ids]
    if path.suffix == ".f32":
        mat = np.stack([np.asarray(features[m], dtype="<f4") for m in ids]) if ids else np.zeros((0, 0), "<f4")
        mat.astype("<f4").tofile(path)
        with open(path.with_suffix(".jsonl"), "w") as fh:
            fh.write(json.dumps({"rows": len(ids), "dim": int(mat.shape[1]) if ids else 0}) + "\n")
            for m in meta:
                fh.write(json.dumps(m) + "\n")
    else:
        with open(path, "w") as fh:
            for m in meta:
                m = dict(m, vector=[float(v) for v in features[m["media_id"]]])
                fh.write(json.dumps(m) + "\n")
    return path


def load_feature_store(path) -> tuple[dict[str, np.ndarray], list[dict]]:
    """Returns (media_id -> vector, metadata rows)."""
    path = Path(path)
    if path.suffix == ".f32":
        lines = path.with_suffix(".jsonl").read_text().splitlines()
        head = json.loads(lines[0])
        meta = [json.loads(l) for l in lines[1:] if l.strip()]
        mat = np.fromfile(path, dtype="<f4").reshape(head["rows"], head["dim"])
        return {m["media_id"]: mat[i].astype(np.float64) for i, m in enumerate(meta)}, meta
    feats, meta = {}, []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        feats[obj["media_id"]] = np.asarray(obj.pop("vector"), dtype=np.float64)
        meta.append(obj)
    return feats, meta
