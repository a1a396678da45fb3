"""Identity (softmax cross-entropy) and batch-hard triplet losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch


class BatchConfigError(ValueError):
    pass


def identity_loss(logits: torch.Tensor, labels) -> torch.Tensor:
    """Mean negative log-softmax of the true-class logit."""
    labels = torch.as_tensor(labels, dtype=torch.long, device=logits.device)
    if logits.dim() != 2 or labels.dim() != 1 or labels.shape[0] != logits.shape[0]:
        raise ValueError(f"logits {tuple(logits.shape)} and labels {tuple(labels.shape)} do not match")
    C = logits.shape[1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"label out of range [0, {C})")
    log_norm = torch.logsumexp(logits, dim=1)
    true = logits.gather(1, labels[:, None]).squeeze(1)
    return (log_norm - true).mean()


def pairwise_distances(features: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    """Euclidean distance matrix; eps keeps sqrt differentiable at zero."""
    diff = features[:, None, :] - features[None, :, :]
    return (diff.pow(2).sum(-1) + eps).sqrt()


@dataclass
class MiningRecord:
    """Hard positive/negative picked for every anchor in one batch."""

    anchor_domain: np.ndarray
    pos_index: np.ndarray
    pos_domain: np.ndarray
    pos_dist: np.ndarray
    neg_index: np.ndarray
    neg_domain: np.ndarray
    neg_dist: np.ndarray

    def __len__(self):
        return len(self.anchor_domain)

    def to_json(self) -> dict:
        return {k: getattr(self, k).tolist() for k in self.__dataclass_fields__}

    @classmethod
    def from_json(cls, d: dict) -> "MiningRecord":
        return cls(**{k: np.asarray(d[k]) for k in cls.__dataclass_fields__})


def batch_hard_triplet_loss(features: torch.Tensor, labels, domains: Sequence[str], margin: float = 0.0):
    """Batch-hard triplet loss: mean over anchors of [margin + d(a,p*) - d(a,n*)]_+.

    Returns ``(loss, MiningRecord)``. Ties resolve to the lowest index.
    """
    labels = torch.as_tensor(labels, device=features.device)
    n = features.shape[0]
    if labels.shape[0] != n or len(domains) != n:
        raise ValueError("features, labels and domains must have equal length")
    same = labels[:, None] == labels[None, :]
    counts = same.sum(1)
    if (counts < 2).any():
        lone = sorted({int(l) for l in labels[counts < 2].tolist()})
        raise BatchConfigError(f"identities with a single sample in batch: {lone}")
    if same.all():
        raise BatchConfigError("batch has no negatives (single identity)")

    dist = pairwise_distances(features)
    eye = torch.eye(n, dtype=torch.bool, device=features.device)
    pos_mask = same & ~eye
    neg_mask = ~same
    d_detached = dist.detach()
    pos_idx = d_detached.masked_fill(~pos_mask, float("-inf")).argmax(1)
    neg_idx = d_detached.masked_fill(~neg_mask, float("inf")).argmin(1)
    rows = torch.arange(n, device=features.device)
    d_ap = dist[rows, pos_idx]
    d_an = dist[rows, neg_idx]
    loss = torch.clamp(margin + d_ap - d_an, min=0).mean()

    dom = np.asarray(domains)
    pi, ni = pos_idx.cpu().numpy(), neg_idx.cpu().numpy()
    record = MiningRecord(
        anchor_domain=dom.copy(), pos_index=pi, pos_domain=dom[pi],
        pos_dist=d_ap.detach().cpu().double().numpy(), neg_index=ni, neg_domain=dom[ni],
        neg_dist=d_an.detach().cpu().double().numpy(),
    )
    return loss, record


def combined_loss(id_loss, tri_loss, weight: float = 1.0):
    if weight < 0:
        raise ValueError("loss weight must be non-negative")
    return id_loss + weight * tri_loss
