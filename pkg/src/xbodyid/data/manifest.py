"""Dataset records and the line-delimited manifest format."""

from __future__ import annotations

import json
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .boxes import BoundingBox, InvalidBoxError

DOMAINS = ("VIS", "SWIR", "MWIR", "LWIR")
SPLITS = ("train", "test")
RECORD_FIELDS = ("subject_id", "domain", "template_id", "media_id", "image_path", "box", "split")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ImageRecord:
    subject_id: str
    domain: str
    template_id: str
    media_id: str
    image_path: str
    box: Optional[BoundingBox] = None
    split: str = "train"

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ManifestError(f"unknown domain {self.domain!r}")
        if self.split not in SPLITS:
            raise ManifestError(f"unknown split {self.split!r}")
        if not self.template_id:
            raise ManifestError("empty template_id")

    def to_json(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "domain": self.domain,
            "template_id": self.template_id,
            "media_id": self.media_id,
            "image_path": self.image_path,
            "box": self.box.as_list() if self.box is not None else None,
            "split": self.split,
        }


@dataclass
class DatasetManifest:
    records: list[ImageRecord]
    root: Optional[Path] = None
    subject_index: dict[str, list[int]] = field(init=False, repr=False)

    def __post_init__(self):
        self.records = list(self.records)
        dup = [m for m, n in Counter(r.media_id for r in self.records).items() if n > 1]
        if dup:
            raise ManifestError(f"duplicate media_id: {', '.join(sorted(dup))}")
        self.subject_index = {}
        for i, r in enumerate(self.records):
            self.subject_index.setdefault(r.subject_id, []).append(i)

    def __eq__(self, other):
        if not isinstance(other, DatasetManifest):
            return NotImplemented
        return self.records == other.records

    def __len__(self):
        return len(self.records)

    @property
    def domains_present(self) -> set[str]:
        return {r.domain for r in self.records}

    @property
    def subjects(self) -> list[str]:
        return sorted(self.subject_index)

    def resolve(self, record: ImageRecord) -> Path:
        p = Path(record.image_path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        if not p.exists():
            raise FileNotFoundError(f"image for {record.media_id} not found: {p}")
        return p

    def filter(self, split=None, domains: Optional[Iterable[str]] = None,
               subjects: Optional[Iterable[str]] = None) -> "DatasetManifest":
        domains = set(domains) if domains is not None else None
        subjects = set(subjects) if subjects is not None else None
        keep = [
            r for r in self.records
            if (split is None or r.split == split)
            and (domains is None or r.domain in domains)
            and (subjects is None or r.subject_id in subjects)
        ]
        return DatasetManifest(keep, root=self.root)

    def subject_domains(self) -> dict[str, set[str]]:
        return {s: {self.records[i].domain for i in idx} for s, idx in self.subject_index.items()}


def _parse_record(obj, lineno: int) -> ImageRecord:
    if not isinstance(obj, dict):
        raise ManifestError(f"line {lineno}: expected an object")
    for name in RECORD_FIELDS:
        if name not in obj:
            raise ManifestError(f"line {lineno}: missing field '{name}'")
    for name in ("subject_id", "domain", "template_id", "media_id", "image_path", "split"):
        if not isinstance(obj[name], str):
            raise ManifestError(f"line {lineno}: field '{name}' must be a string")
    box = obj["box"]
    try:
        box = BoundingBox.from_list(box) if box is not None else None
    except (InvalidBoxError, TypeError) as exc:
        raise ManifestError(f"line {lineno}: field 'box': {exc}") from None
    try:
        return ImageRecord(
            subject_id=obj["subject_id"], domain=obj["domain"], template_id=obj["template_id"],
            media_id=obj["media_id"], image_path=obj["image_path"], box=box, split=obj["split"],
        )
    except ManifestError as exc:
        field_name = "domain" if "domain" in str(exc) else "split" if "split" in str(exc) else "template_id"
        raise ManifestError(f"line {lineno}: field '{field_name}': {exc}") from None


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: malformed record ({exc.msg})") from None
            records.append(_parse_record(obj, lineno))
    return DatasetManifest(records, root=path.parent)


def save_manifest(manifest: DatasetManifest, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for r in manifest.records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")
    os.replace(tmp, path)
    return path
