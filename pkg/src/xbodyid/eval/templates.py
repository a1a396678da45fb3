"""Mean-aggregated templates over groups of media."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..data.manifest import DatasetManifest


@dataclass
class Template:
    template_id: str
    subject_id: str
    domains: tuple
    feature: np.ndarray
    media_ids: tuple = field(default=())

    @property
    def media_count(self) -> int:
        return len(self.media_ids)


def _group_key(record, grouping: str) -> str:
    if grouping == "subject":
        return record.subject_id
    if grouping == "subject-domain":
        return f"{record.subject_id}|{record.domain}"
    if grouping == "template":
        return record.template_id
    if grouping == "media":
        return record.media_id
    raise ValueError(f"unknown grouping {grouping!r}")


def build_templates(features: Mapping[str, np.ndarray], manifest: DatasetManifest,
                    grouping: str = "subject") -> list[Template]:
    """One template per group, feature = mean of member vectors.

    ``grouping`` is ``subject`` (all media of a subject), ``subject-domain``,
    ``template`` (the manifest's template_id) or ``media`` (one per image).
    Templates come back sorted by id.
    """
    groups: dict[str, list] = {}
    for r in manifest.records:
        groups.setdefault(_group_key(r, grouping), []).append(r)
    out = []
    for key in sorted(groups):
        recs = groups[key]
        subjects = {r.subject_id for r in recs}
        if len(subjects) != 1:
            raise ValueError(f"template {key} mixes subjects {sorted(subjects)}")
        missing = [r.media_id for r in recs if r.media_id not in features]
        if missing:
            raise KeyError(f"no feature for media {missing[0]} (template {key})")
        vecs = np.stack([np.asarray(features[r.media_id], dtype=np.float64) for r in recs])
        out.append(Template(
            template_id=key, subject_id=recs[0].subject_id,
            domains=tuple(sorted({r.domain for r in recs})),
            feature=vecs.mean(axis=0), media_ids=tuple(r.media_id for r in recs),
        ))
    if not out:
        raise ValueError("no media to build templates from")
    return out
