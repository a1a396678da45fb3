"""1:N identification protocol, domain-pair matrix and local-region ablation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from ..data.manifest import DOMAINS, DatasetManifest
from .features import fuse_parts
from .metrics import average_precisions, cmc, cosine_similarity_matrix, SimilarityMatrix
from .templates import build_templates

ABLATION_SUBSETS = (
    ("face", "torso", "lower"),
    ("torso", "lower"),
    ("face", "lower"),
    ("face", "torso"),
)
EXCLUSION_RULES = ("same_media", "same_template")


class ProtocolError(ValueError):
    pass


@dataclass
class ProtocolConfig:
    gallery_domain: str = "VIS"
    query_domains: tuple = ("SWIR", "MWIR", "LWIR")
    ranks: tuple = (1, 5, 10)
    mode: str = "template"  # template | per-image
    exclusions: tuple = ()
    split: str = "test"
    keep_similarity: bool = False

    def __post_init__(self):
        self.query_domains = tuple(self.query_domains)
        self.ranks = tuple(int(k) for k in self.ranks)
        self.exclusions = tuple(self.exclusions)
        for d in (self.gallery_domain, *self.query_domains):
            if d not in DOMAINS:
                raise ProtocolError(f"unknown domain {d!r}")
        if self.gallery_domain in self.query_domains:
            raise ProtocolError("gallery domain must not also be a query domain")
        if self.mode not in ("template", "per-image"):
            raise ProtocolError(f"unknown mode {self.mode!r}")
        bad = set(self.exclusions) - set(EXCLUSION_RULES)
        if bad:
            raise ProtocolError(f"unknown exclusion rules {sorted(bad)}")
        if not self.ranks or min(self.ranks) < 1:
            raise ProtocolError("ranks must be positive")

    def to_json(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass
class DomainResult:
    domain: str
    rank: dict
    cmc: list
    mAP: float
    n_queries: int
    n_gallery: int
    n_map_excluded: int = 0
    similarity: Optional[SimilarityMatrix] = field(default=None, repr=False)

    @property
    def rank1(self) -> float:
        return self.cmc[0]

    def to_json(self) -> dict:
        return {"domain": self.domain, "rank": {str(k): v for k, v in self.rank.items()}, "cmc": self.cmc,
                "mAP": self.mAP, "n_queries": self.n_queries, "n_gallery": self.n_gallery,
                "n_map_excluded": self.n_map_excluded}


@dataclass
class EvalReport:
    config: dict
    per_domain: dict
    extra: dict = field(default_factory=dict)

    def rank1(self) -> dict:
        return {d: r.rank1 for d, r in self.per_domain.items()}

    def to_json(self) -> dict:
        return {"config": self.config, "per_domain": {d: r.to_json() for d, r in self.per_domain.items()},
                "extra": self.extra}

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))
        with open(out / "cmc.csv", "w") as fh:
            width = max(len(r.cmc) for r in self.per_domain.values())
            fh.write("domain," + ",".join(f"rank{k}" for k in range(1, width + 1)) + "\n")
            for d, r in self.per_domain.items():
                fh.write(d + "," + ",".join(repr(v) for v in r.cmc) + "\n")
        for d, r in self.per_domain.items():
            if r.similarity is not None:
                r.similarity.to_csv(out / f"similarity_{self.config['gallery_domain']}_{d}.csv")
        return out / "report.json"


def _side(features, manifest: DatasetManifest, domain: str, mode: str):
    part = manifest.filter(domains=[domain])
    if not len(part):
        raise ProtocolError(f"no {domain} media in evaluation split")
    grouping = "subject" if mode == "template" else "media"
    return build_templates(features, part, grouping), part


def _exclusion_mask(rules, q_templates, g_templates, manifest: DatasetManifest):
    if not rules:
        return None
    tmpl = {r.media_id: r.template_id for r in manifest.records}
    mask = np.zeros((len(q_templates), len(g_templates)), dtype=bool)
    for i, q in enumerate(q_templates):
        q_media = set(q.media_ids)
        q_tmpl = {tmpl[m] for m in q.media_ids}
        for j, g in enumerate(g_templates):
            if "same_media" in rules and q_media & set(g.media_ids):
                mask[i, j] = True
            if "same_template" in rules and q_tmpl & {tmpl[m] for m in g.media_ids}:
                mask[i, j] = True
    return mask


def match_domains(features: Mapping[str, np.ndarray], manifest: DatasetManifest, gallery_domain: str,
                  query_domain: str, cfg: ProtocolConfig) -> DomainResult:
    gallery, _ = _side(features, manifest, gallery_domain, cfg.mode)
    queries, _ = _side(features, manifest, query_domain, cfg.mode)
    sim = cosine_similarity_matrix(
        np.stack([t.feature for t in queries]), np.stack([t.feature for t in gallery]),
        [t.template_id for t in queries], [t.template_id for t in gallery],
    )
    q_subj = [t.subject_id for t in queries]
    g_subj = [t.subject_id for t in gallery]
    excl = _exclusion_mask(cfg.exclusions, queries, gallery, manifest)
    curve = cmc(sim, q_subj, g_subj, exclusions=excl)
    ap = average_precisions(sim, q_subj, g_subj, exclusions=excl)
    return DomainResult(
        domain=query_domain,
        rank={k: float(curve[min(k, len(curve)) - 1]) for k in cfg.ranks},
        cmc=[float(v) for v in curve], mAP=ap.mAP, n_queries=len(queries), n_gallery=len(gallery),
        n_map_excluded=ap.n_excluded, similarity=sim if cfg.keep_similarity else None,
    )


def run_identification_protocol(features: Mapping[str, np.ndarray], manifest: DatasetManifest,
                                cfg: ProtocolConfig, out_dir=None) -> EvalReport:
    """Match query templates of every query domain against gallery templates.

    ``features`` maps media_id to its fused feature; see ``features.extract_features``.
    """
    test = manifest.filter(split=cfg.split)
    if not len(test):
        raise ProtocolError(f"no records in split {cfg.split!r}")
    per_domain = {d: match_domains(features, test, cfg.gallery_domain, d, cfg) for d in cfg.query_domains}
    report = EvalReport(config=cfg.to_json(), per_domain=per_domain)
    if out_dir is not None:
        report.save(out_dir)
    return report


def gallery_query_matrix(features: Mapping[str, np.ndarray], manifest: DatasetManifest,
                         domains: Sequence[str] = DOMAINS, mode: str = "template",
                         split: str = "test") -> np.ndarray:
    """Rank-1 for every ordered (gallery row, query column) pair; NaN on the diagonal."""
    test = manifest.filter(split=split)
    present = test.domains_present
    missing = [d for d in domains if d not in present]
    if missing:
        raise ProtocolError(f"domains missing from {split} split: {missing}")
    out = np.full((len(domains), len(domains)), np.nan)
    for i, g in enumerate(domains):
        for j, q in enumerate(domains):
            if i != j:
                cfg = ProtocolConfig(gallery_domain=g, query_domains=(q,), ranks=(1,), mode=mode, split=split)
                out[i, j] = match_domains(features, test, g, q, cfg).rank1
    return out


def write_matrix_csv(matrix: np.ndarray, domains: Sequence[str], path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        fh.write("gallery\\query," + ",".join(domains) + "\n")
        for d, row in zip(domains, matrix):
            fh.write(d + "," + ",".join("" if np.isnan(v) else repr(float(v)) for v in row) + "\n")
    return path


def local_feature_ablation(model, parts: Mapping[str, Mapping[str, np.ndarray]], manifest: DatasetManifest,
                           cfg: ProtocolConfig, subsets: Sequence[Sequence[str]] = ABLATION_SUBSETS) -> list[dict]:
    """Re-fuse z_final with z_local averaged over each region subset and rerun the protocol.

    ``parts`` comes from ``features.extract_parts``. The global feature is always kept.
    """
    rows = []
    for subset in subsets:
        subset = tuple(subset)
        if not subset:
            raise ProtocolError("empty region subset")
        feats = fuse_parts(model, parts, subset)
        report = run_identification_protocol(feats, manifest, cfg)
        rows.append({"regions": ["global", *subset], "rank1": report.rank1()})
    return rows
