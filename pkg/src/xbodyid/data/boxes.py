"""Box geometry and face-overlap labelling of body detections."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence


class InvalidBoxError(ValueError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if any(c < 0 for c in coords):
            raise InvalidBoxError(f"negative coordinate in box {coords}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise InvalidBoxError(f"degenerate box {coords}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "BoundingBox":
        if len(values) != 4:
            raise InvalidBoxError(f"box needs four numbers, got {len(values)}")
        return cls(*(float(v) for v in values))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two axis-aligned boxes."""
    if a.area <= 0 or b.area <= 0:
        raise InvalidBoxError("zero-area box")
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def assign_labels_by_face_overlap(
    body_boxes: Sequence[BoundingBox],
    face_boxes: Sequence[tuple[BoundingBox, str]],
    threshold: float = 0.75,
) -> list[tuple[BoundingBox, Optional[str]]]:
    """Give each body box the subject of its best-overlapping face box.

    A body box is left unlabelled when it overlaps no face at all, or when
    more than one face clears ``threshold`` (ambiguous detection). If two
    different faces tie for the maximum overlap the box is also left
    unlabelled, which keeps the result independent of face order.
    """
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    out = []
    for body in body_boxes:
        scores = [(iou(body, face), sid) for face, sid in face_boxes]
        if not scores:
            out.append((body, None))
            continue
        best = max(s for s, _ in scores)
        above = sum(1 for s, _ in scores if s > threshold)
        winners = {sid for s, sid in scores if s == best}
        if best <= 0 or above > 1 or len(winners) > 1:
            out.append((body, None))
        else:
            out.append((body, winners.pop()))
    return out
