"""P x K identity-balanced batch samplers, with and without domain coverage.

Batches are lists of record indices into ``manifest.records``. Each epoch's
batches are a pure function of (manifest, spec, epoch).
"""

from __future__ import annotations

from dataclasses import dataclass
import math
from itertools import count
from typing import Iterator, Optional, Sequence

import numpy as np

from ..data.manifest import DOMAINS, DatasetManifest


class SamplerError(ValueError):
    pass


@dataclass
class BatchSpec:
    P: int = 4
    K: int = 4
    domain_aware: bool = True
    seed: int = 0
    domains: tuple = DOMAINS
    # identity passes per epoch; None sizes it so each subject's images are seen about once
    passes: Optional[int] = None

    def __post_init__(self):
        self.domains = tuple(self.domains)
        if self.passes is not None and self.passes < 1:
            raise SamplerError("passes must be positive")
        if self.P < 2:
            raise SamplerError("P must be at least 2 (triplet mining needs negatives)")
        if self.K < 2:
            raise SamplerError("K must be at least 2 (triplet mining needs positives)")
        if self.domain_aware and self.K % len(self.domains):
            raise SamplerError(f"K={self.K} not divisible by the {len(self.domains)} domains")

    @property
    def batch_size(self) -> int:
        return self.P * self.K


def eligible_subjects(manifest: DatasetManifest, domains: Sequence[str] = DOMAINS) -> list[str]:
    """Subjects with media in every one of ``domains``."""
    need = set(domains)
    return sorted(s for s, have in manifest.subject_domains().items() if need <= have)


def _group_subjects(subjects: list[str], P: int, rng: np.random.Generator) -> list[list[str]]:
    """Shuffle subjects into groups of P; the last short group is padded with
    other subjects so every subject is covered at least once per epoch."""
    if len(subjects) < P:
        raise SamplerError(f"only {len(subjects)} eligible identities, need P={P}")
    order = [subjects[i] for i in rng.permutation(len(subjects))]
    groups = [order[i:i + P] for i in range(0, len(order), P)]
    if len(groups[-1]) < P:
        last = groups[-1]
        pool = [s for s in order if s not in last]
        fill = rng.choice(len(pool), size=P - len(last), replace=False)
        last.extend(pool[i] for i in sorted(fill))
    return groups


def _take(indices: list[int], n: int, rng: np.random.Generator) -> list[int]:
    pick = rng.choice(len(indices), size=n, replace=len(indices) < n)
    return [indices[i] for i in pick]


def domain_aware_batches(manifest: DatasetManifest, spec: BatchSpec, epoch: int = 0) -> list[list[int]]:
    """One epoch of batches where every identity brings K/len(domains) images per domain."""
    if not spec.domain_aware:
        raise SamplerError("spec.domain_aware is False; use random_batches")
    rng = np.random.default_rng([spec.seed, epoch])
    subjects = eligible_subjects(manifest, spec.domains)
    per_domain = spec.K // len(spec.domains)
    by_key: dict[tuple[str, str], list[int]] = {}
    for i, r in enumerate(manifest.records):
        by_key.setdefault((r.subject_id, r.domain), []).append(i)
    if spec.passes is not None:
        passes = spec.passes
    else:
        typical = int(np.median([len(by_key[(s, d)]) for s in subjects for d in spec.domains])) if subjects else 1
        passes = max(1, math.ceil(typical / per_domain))
    batches = []
    for _ in range(passes):
        for group in _group_subjects(subjects, spec.P, rng):
            batch = []
            for s in group:
                for d in spec.domains:
                    batch.extend(_take(by_key[(s, d)], per_domain, rng))
            batches.append(batch)
    return batches


def random_batches(manifest: DatasetManifest, spec: BatchSpec, epoch: int = 0) -> list[list[int]]:
    """One epoch of P x K batches drawn without regard to domain."""
    rng = np.random.default_rng([spec.seed, epoch])
    allowed = set(spec.domains)
    by_subject: dict[str, list[int]] = {}
    for i, r in enumerate(manifest.records):
        if r.domain in allowed:
            by_subject.setdefault(r.subject_id, []).append(i)
    subjects = sorted(by_subject)
    if spec.passes is not None:
        passes = spec.passes
    else:
        typical = int(np.median([len(v) for v in by_subject.values()])) if subjects else 1
        passes = max(1, math.ceil(typical / spec.K))
    return [
        [i for s in group for i in _take(by_subject[s], spec.K, rng)]
        for _ in range(passes)
        for group in _group_subjects(subjects, spec.P, rng)
    ]


def epoch_batches(manifest: DatasetManifest, spec: BatchSpec, epoch: int = 0) -> list[list[int]]:
    fn = domain_aware_batches if spec.domain_aware else random_batches
    return fn(manifest, spec, epoch)


def batch_stream(manifest: DatasetManifest, spec: BatchSpec, start_epoch: int = 0) -> Iterator[list[int]]:
    """Endless stream of batches, epoch after epoch."""
    for epoch in count(start_epoch):
        yield from epoch_batches(manifest, spec, epoch)
