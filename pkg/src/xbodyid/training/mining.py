"""Aggregate hard-mining outcomes into cross-domain percentages."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np

from .losses import MiningRecord


@dataclass(frozen=True)
class MiningStats:
    pct_hard_pos_cross_domain: float
    pct_hard_neg_same_domain: float
    n_anchors: int
    n_pos_cross_domain: int
    n_neg_same_domain: int

    def to_json(self) -> dict:
        return asdict(self)


def mining_statistics(records: Iterable[MiningRecord]) -> MiningStats:
    """Per-anchor counts: hard positive from another domain, hard negative from the same one."""
    records = list(records)
    if not records:
        raise ValueError("no mining records")
    n = pos_cross = neg_same = 0
    for r in records:
        a = np.asarray(r.anchor_domain)
        n += len(a)
        pos_cross += int(np.sum(np.asarray(r.pos_domain) != a))
        neg_same += int(np.sum(np.asarray(r.neg_domain) == a))
    if n == 0:
        raise ValueError("mining records contain no anchors")
    return MiningStats(100.0 * pos_cross / n, 100.0 * neg_same / n, n, pos_cross, neg_same)
