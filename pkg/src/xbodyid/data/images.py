"""Image loading: optional box crop, resize, scale to [-1, 1]."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
from PIL import Image

from .manifest import DatasetManifest, ImageRecord


def load_image(manifest: DatasetManifest, record: ImageRecord, height: int, width: int) -> torch.Tensor:
    with Image.open(manifest.resolve(record)) as im:
        im = im.convert("RGB")
        if record.box is not None:
            b = record.box
            im = im.crop((b.x_min, b.y_min, b.x_max, b.y_max))
        if im.size != (width, height):
            im = im.resize((width, height), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return torch.from_numpy((arr - 0.5) / 0.5).permute(2, 0, 1).contiguous()


class ImageCache:
    """Decoded images kept in memory, keyed by media_id."""

    def __init__(self, manifest: DatasetManifest, height: int, width: int):
        self.manifest = manifest
        self.height, self.width = height, width
        self._cache: dict[str, torch.Tensor] = {}

    def get(self, index: int) -> torch.Tensor:
        rec = self.manifest.records[index]
        if rec.media_id not in self._cache:
            self._cache[rec.media_id] = load_image(self.manifest, rec, self.height, self.width)
        return self._cache[rec.media_id]

    def batch(self, indices: Sequence[int]) -> torch.Tensor:
        return torch.stack([self.get(i) for i in indices])
