"""Experiment orchestration shared by the CLI and the scripts/ drivers."""

from __future__ import annotations

import json
import logging
import os
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from ..data.manifest import DOMAINS, DatasetManifest, load_manifest
from ..data.synth import generate_synthetic_dataset
from ..eval.features import extract_parts, load_feature_store, save_feature_store
from ..eval.protocol import (ABLATION_SUBSETS, ProtocolConfig, gallery_query_matrix, local_feature_ablation,
                             run_identification_protocol, write_matrix_csv)
from ..model.checkpoint import load_checkpoint
from ..model.lora import has_lora, merge_lora
from ..model.vit import BodyIdNet
from ..training.trainer import train
from .config import RunConfig, deep_merge
from .runs import run_directory, write_json

log = logging.getLogger(__name__)


def subsample_subjects(manifest: DatasetManifest, n: Optional[int], seed: int) -> DatasetManifest:
    """Keep ``n`` training subjects (seeded choice); test records are untouched."""
    if n is None:
        return manifest
    train_subj = sorted({r.subject_id for r in manifest.records if r.split == "train"})
    if not 2 <= n <= len(train_subj):
        raise ValueError(f"--subjects must be in [2, {len(train_subj)}], got {n}")
    rng = np.random.default_rng([seed, 7])
    keep = {train_subj[i] for i in rng.choice(len(train_subj), n, replace=False)}
    return DatasetManifest([r for r in manifest.records if r.split == "test" or r.subject_id in keep],
                           root=manifest.root)


def synthesize(cfg: RunConfig, out_dir) -> Path:
    """Generate a synthetic dataset into ``out_dir`` (staged, renamed on success)."""
    out_dir = Path(out_dir)
    synth = cfg.synthetic()
    with run_directory(out_dir) as stage:
        generate_synthetic_dataset(synth, stage)
        write_json(stage / "config.json", {**cfg.to_dict(), "command": "synth"})
    return out_dir / "manifest.jsonl"


def _resolve_domains(domains: Optional[Sequence[str]]) -> tuple:
    if not domains:
        return DOMAINS
    bad = [d for d in domains if d not in DOMAINS]
    if bad or len(set(domains)) != len(domains):
        raise ValueError(f"invalid domain list {list(domains)}; choose from {list(DOMAINS)}")
    return tuple(d for d in DOMAINS if d in domains)


def train_run(cfg: RunConfig, manifest_path, out_dir, init_checkpoint=None) -> Path:
    """Train a model and write checkpoint, logs and the effective config to ``out_dir``.

    Domain restriction and subject subsampling are read from
    ``cfg.train['domains']`` and ``cfg.train['subjects']``.
    """
    out_dir = Path(out_dir)
    manifest = load_manifest(manifest_path)
    tcfg_dict = dict(cfg.train)
    domains = _resolve_domains(tcfg_dict.pop("domains", None))
    n_subjects = tcfg_dict.pop("subjects", None)
    sub_cfg = RunConfig.from_dict({**cfg.to_dict(), "train": tcfg_dict})
    tcfg = sub_cfg.train_config()
    tcfg.batch.domains = domains
    tcfg.batch.__post_init__()
    manifest = subsample_subjects(manifest, n_subjects, cfg.seed)
    n_classes = len({r.subject_id for r in manifest.records if r.split == "train"})

    torch.manual_seed(cfg.seed)
    if init_checkpoint is not None:
        model, _ = load_checkpoint(init_checkpoint)
        if model.cfg.n_classes != n_classes:
            base = model
            model = BodyIdNet(sub_cfg.model_config(n_classes))
            state = {k: v for k, v in base.state_dict().items() if not k.startswith("classifier.")}
            model.load_state_dict({**model.state_dict(), **state})
    else:
        model = BodyIdNet(sub_cfg.model_config(n_classes))

    data_ref = os.path.relpath(Path(manifest_path).resolve(), out_dir.resolve())
    effective = {**cfg.to_dict(), "command": "train", "data": data_ref,
                 "train_resolved": tcfg.to_json(), "model_resolved": model.cfg.to_json(),
                 "init_checkpoint": str(init_checkpoint) if init_checkpoint else None}
    t0 = time.time()
    with run_directory(out_dir) as stage:
        write_json(stage / "config.json", effective)
        res = train(model, manifest, tcfg, out_dir=stage)
        write_json(stage / "label_map.json", res.label_map)
        write_json(stage / "summary.json", {"seconds": time.time() - t0, "epochs": [e.to_json() for e in res.epochs]})
    return out_dir


def load_model_for_eval(checkpoint) -> BodyIdNet:
    model, _ = load_checkpoint(checkpoint)
    if has_lora(model):
        merge_lora(model)
    return model.eval()


def evaluate(features_or_model, manifest: DatasetManifest, mode: str, protocol: ProtocolConfig, out_dir,
             subsets=ABLATION_SUBSETS) -> dict:
    """Run one evaluation mode and write its files into an existing ``out_dir``."""
    out_dir = Path(out_dir)
    test = manifest.filter(split=protocol.split)
    if isinstance(features_or_model, BodyIdNet):
        model = features_or_model
        parts = extract_parts(model, test)
        feats = {m: p["z_final"] for m, p in parts.items()}
        save_feature_store(out_dir / "features.jsonl", feats, test)
    else:
        model, parts, feats = None, None, features_or_model

    if mode == "protocol":
        report = run_identification_protocol(feats, manifest, protocol, out_dir=out_dir)
        result = {"rank1": report.rank1(), "mAP": {d: r.mAP for d, r in report.per_domain.items()}}
        with open(out_dir / "rank1.csv", "w") as fh:
            fh.write("query_domain,rank1,mAP\n")
            for d, r in report.per_domain.items():
                fh.write(f"{d},{r.rank1!r},{r.mAP!r}\n")
    elif mode == "matrix":
        mat = gallery_query_matrix(feats, manifest, DOMAINS, protocol.mode, protocol.split)
        write_matrix_csv(mat, DOMAINS, out_dir / "domain_matrix.csv")
        result = {"matrix": [[None if np.isnan(v) else float(v) for v in row] for row in mat],
                  "domains": list(DOMAINS)}
    elif mode == "ablation":
        if model is None:
            raise ValueError("ablation needs a model checkpoint, not a feature store")
        rows = local_feature_ablation(model, parts, manifest, protocol, subsets)
        with open(out_dir / "ablation.csv", "w") as fh:
            fh.write("features," + ",".join(protocol.query_domains) + "\n")
            for r in rows:
                fh.write(" + ".join(r["regions"]) + "," +
                         ",".join(repr(r["rank1"][d]) for d in protocol.query_domains) + "\n")
        result = {"rows": rows}
    else:
        raise ValueError(f"unknown eval mode {mode!r}")
    write_json(out_dir / f"{mode}.json", {"mode": mode, "protocol": protocol.to_json(), **result})
    return result


def eval_run(checkpoint=None, features=None, manifest_path=None, mode="protocol",
             protocol: Optional[ProtocolConfig] = None, out_dir=None, seed: int = 0) -> dict:
    if (checkpoint is None) == (features is None):
        raise ValueError("give exactly one of a checkpoint or a feature store")
    protocol = protocol or ProtocolConfig()
    manifest = load_manifest(manifest_path)
    if checkpoint is not None:
        if not Path(checkpoint).exists():
            raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
        source = load_model_for_eval(checkpoint)
    else:
        source, _ = load_feature_store(features)
    with run_directory(Path(out_dir)) as stage:
        write_json(stage / "config.json", {"command": "eval", "mode": mode, "seed": seed,
                                           "checkpoint": str(checkpoint) if checkpoint else None,
                                           "features": str(features) if features else None,
                                           "data": str(Path(manifest_path).resolve()),
                                           "protocol": protocol.to_json()})
        result = evaluate(source, manifest, mode, protocol, stage)
    return result


# --- the pinned smoke experiment -------------------------------------------------

SMOKE_CONFIG = {
    "seed": 0,
    "synth": {"n_subjects": 30, "n_test_subjects": 10, "images_per_subject_per_domain": 4},
    # full-width backbone, two blocks, images resized to 192x64 to fit a CPU budget
    "model": {"depth": 2, "heads": 12, "image_height": 192, "image_width": 64},
    "train": {"epochs": 5, "lr": 2e-4, "warmup_steps": 10, "margin": 1.0, "head_lr_scale": 10.0,
              "batch": {"P": 4, "K": 4, "domain_aware": True, "passes": 8}},
    "protocol": {"gallery_domain": "VIS", "query_domains": ["SWIR", "MWIR", "LWIR"]},
    "lora": None,
}


def smoke_run(out_dir, overrides: Optional[dict] = None) -> dict:
    """Synthesize, train and evaluate end to end; returns the metrics dict.

    ``out_dir/config.json`` holds the effective config, so ``rerun`` can
    reproduce the whole thing.
    """
    cfg = RunConfig.from_dict(deep_merge(SMOKE_CONFIG, overrides or {}))
    return _run_pipeline(cfg, Path(out_dir))


def rerun(run_dir, out_dir) -> dict:
    cfg = json.loads((Path(run_dir) / "config.json").read_text())
    return _run_pipeline(RunConfig.from_dict({k: cfg[k] for k in ("seed", "synth", "model", "train", "protocol",
                                                                  "lora")}), Path(out_dir))


def _run_pipeline(cfg: RunConfig, out_dir: Path) -> dict:
    t0 = time.time()
    with run_directory(out_dir) as stage:
        write_json(stage / "config.json", {**cfg.to_dict(), "command": "smoke"})
        manifest_path = synthesize(cfg, stage / "data")
        t_synth = time.time() - t0
        train_run(cfg, manifest_path, stage / "train")
        t_train = time.time() - t0 - t_synth
        model = load_model_for_eval(stage / "train" / "model.pt")
        (stage / "eval").mkdir()
        result = evaluate(model, load_manifest(manifest_path), "protocol", cfg.protocol_config(), stage / "eval")
        epochs = [json.loads(l) for l in (stage / "train" / "train_log.jsonl").read_text().splitlines()]
        metrics = {
            "rank1": result["rank1"], "mAP": result["mAP"],
            "epochs": epochs,
            "seconds": {"synth": t_synth, "train": t_train, "total": time.time() - t0},
        }
        write_json(stage / "metrics.json", metrics)
    return metrics
