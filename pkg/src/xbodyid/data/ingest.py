"""Turn per-frame body detections plus labelled face boxes into manifest records.

Input is line-delimited, one frame per line::

    {"image_path": "...", "domain": "MWIR", "template_id": "vid03", "split": "train",
     "bodies": [[x0, y0, x1, y1], ...],
     "faces": [{"box": [x0, y0, x1, y1], "subject_id": "S12"}, ...]}

Body boxes that end up unlabelled are dropped and counted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .boxes import BoundingBox, assign_labels_by_face_overlap
from .manifest import DatasetManifest, ImageRecord, ManifestError


@dataclass
class IngestSummary:
    frames: int
    bodies: int
    labelled: int
    dropped: int


def ingest_detections(path, threshold: float = 0.75, root=None) -> tuple[DatasetManifest, IngestSummary]:
    path = Path(path)
    records, frames, bodies, dropped = [], 0, 0, 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                body_boxes = [BoundingBox.from_list(b) for b in obj.get("bodies", [])]
                faces = [(BoundingBox.from_list(f["box"]), str(f["subject_id"])) for f in obj.get("faces", [])]
                image_path, domain, template = obj["image_path"], obj["domain"], obj["template_id"]
                split = obj.get("split", "train")
            except (KeyError, TypeError, ValueError) as exc:
                raise ManifestError(f"{path}:{lineno}: bad detection record ({exc})") from None
            frames += 1
            stem = Path(image_path).stem
            for k, (box, sid) in enumerate(assign_labels_by_face_overlap(body_boxes, faces, threshold)):
                bodies += 1
                if sid is None:
                    dropped += 1
                    continue
                records.append(ImageRecord(
                    subject_id=sid, domain=domain, template_id=template,
                    media_id=f"{template}/{stem}#{k}", image_path=image_path, box=box, split=split,
                ))
    manifest = DatasetManifest(records, root=Path(root) if root is not None else path.parent)
    return manifest, IngestSummary(frames, bodies, len(records), dropped)
