"""Cosine similarity, CMC and mAP over query x gallery score matrices."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


class MetricError(ValueError):
    pass


@dataclass
class SimilarityMatrix:
    scores: np.ndarray
    query_ids: list
    gallery_ids: list

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.shape != (len(self.query_ids), len(self.gallery_ids)):
            raise MetricError(f"score shape {self.scores.shape} does not match "
                              f"{len(self.query_ids)} x {len(self.gallery_ids)} labels")

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("query," + ",".join(str(g) for g in self.gallery_ids) + "\n")
            for q, row in zip(self.query_ids, self.scores):
                fh.write(f"{q}," + ",".join(repr(float(v)) for v in row) + "\n")


def _as_matrix(x, names):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    norms = np.linalg.norm(x, axis=1)
    bad = np.flatnonzero(norms == 0)
    if bad.size:
        label = names[bad[0]] if names is not None else int(bad[0])
        raise MetricError(f"zero-norm feature for {label}")
    return x / norms[:, None]


def cosine_similarity_matrix(queries, gallery, query_ids: Optional[Sequence] = None,
                             gallery_ids: Optional[Sequence] = None) -> SimilarityMatrix:
    q = np.asarray(queries, dtype=np.float64)
    g = np.asarray(gallery, dtype=np.float64)
    if q.shape[-1] != g.shape[-1]:
        raise MetricError(f"feature dims differ: {q.shape[-1]} vs {g.shape[-1]}")
    qn, gn = _as_matrix(q, query_ids), _as_matrix(g, gallery_ids)
    scores = np.clip(qn @ gn.T, -1.0, 1.0)
    return SimilarityMatrix(
        scores,
        list(query_ids) if query_ids is not None else list(range(len(qn))),
        list(gallery_ids) if gallery_ids is not None else list(range(len(gn))),
    )


def rank_gallery(scores: np.ndarray, gallery_ids: Sequence) -> np.ndarray:
    """Column order per row: descending score, ties by ascending gallery id."""
    keys = np.array([str(g) for g in gallery_ids])
    tie = np.argsort(keys, kind="stable")
    tie_rank = np.empty_like(tie)
    tie_rank[tie] = np.arange(len(tie))
    return np.stack([np.lexsort((tie_rank, -row)) for row in np.atleast_2d(scores)])


def _relevance(sim: SimilarityMatrix, query_subjects, gallery_subjects, exclusions):
    qs, gs = np.asarray(query_subjects), np.asarray(gallery_subjects)
    if len(qs) != sim.scores.shape[0] or len(gs) != sim.scores.shape[1]:
        raise MetricError("subject labels do not match similarity matrix")
    keep = np.ones(sim.scores.shape, dtype=bool)
    if exclusions is not None:
        keep &= ~np.asarray(exclusions, dtype=bool)
    return (qs[:, None] == gs[None, :]), keep


def cmc(sim: SimilarityMatrix, query_subjects, gallery_subjects, k_max: Optional[int] = None,
        exclusions=None) -> np.ndarray:
    """CMC[k-1] = fraction of queries whose first true match ranks within top k."""
    match, keep = _relevance(sim, query_subjects, gallery_subjects, exclusions)
    missing = [q for q, row in zip(query_subjects, match & keep) if not row.any()]
    if missing:
        raise MetricError(f"query subjects absent from gallery: {sorted(set(map(str, missing)))}")
    G = sim.scores.shape[1]
    k_max = G if k_max is None else min(k_max, G)
    order = rank_gallery(sim.scores, sim.gallery_ids)
    hits = np.zeros(G + 1)
    for i, cols in enumerate(order):
        cols = cols[keep[i, cols]]
        first = int(np.flatnonzero(match[i, cols])[0])
        hits[first] += 1
    curve = np.cumsum(hits[:G]) / len(order)
    return curve[:k_max]


@dataclass
class APResult:
    mAP: float
    per_query: np.ndarray  # NaN for excluded queries
    n_excluded: int


def average_precisions(sim: SimilarityMatrix, query_subjects, gallery_subjects, exclusions=None) -> APResult:
    match, keep = _relevance(sim, query_subjects, gallery_subjects, exclusions)
    order = rank_gallery(sim.scores, sim.gallery_ids)
    aps = np.full(len(order), np.nan)
    for i, cols in enumerate(order):
        rel = match[i, cols[keep[i, cols]]]
        n_rel = rel.sum()
        if n_rel == 0:
            continue
        hit_ranks = np.flatnonzero(rel) + 1
        aps[i] = np.mean(np.arange(1, n_rel + 1) / hit_ranks)
    n_ex = int(np.isnan(aps).sum())
    if n_ex:
        warnings.warn(f"{n_ex} queries without relevant gallery items excluded from mAP")
    valid = aps[~np.isnan(aps)]
    return APResult(float(valid.mean()) if valid.size else float("nan"), aps, n_ex)


def mean_average_precision(sim: SimilarityMatrix, query_subjects, gallery_subjects, exclusions=None) -> float:
    return average_precisions(sim, query_subjects, gallery_subjects, exclusions).mAP
