"""Helpers shared by the experiment drivers."""

import json
from pathlib import Path

from xbodyid.data import load_manifest
from xbodyid.harness.config import RunConfig, deep_merge
from xbodyid.harness.experiments import SMOKE_CONFIG, evaluate, load_model_for_eval, synthesize, train_run


# small model and dataset for checking a driver end to end in about a minute
TINY = {
    "synth": {"n_subjects": 12, "n_test_subjects": 4, "images_per_subject_per_domain": 2,
              "image_height": 64, "image_width": 32},
    "model": {"embed_dim": 32, "heads": 4, "depth": 1, "image_height": 64, "image_width": 32},
    "train": {"epochs": 2, "batch": {"passes": 1}},
}


def base_config(tiny: bool = False, **overrides) -> RunConfig:
    base = deep_merge(SMOKE_CONFIG, TINY) if tiny else SMOKE_CONFIG
    return RunConfig.from_dict(deep_merge(base, overrides))


def ensure_data(cfg: RunConfig, root: Path) -> Path:
    manifest = root / "data" / "manifest.jsonl"
    if not manifest.exists():
        synthesize(cfg, root / "data")
    return manifest


def train_and_eval(cfg: RunConfig, manifest: Path, out: Path, init=None) -> dict:
    """Train into ``out/train`` and write protocol results to ``out/eval``; returns rank-1 per query domain."""
    train_run(cfg, manifest, out / "train", init_checkpoint=init)
    model = load_model_for_eval(out / "train" / "model.pt")
    (out / "eval").mkdir(parents=True)
    res = evaluate(model, load_manifest(manifest), "protocol", cfg.protocol_config(), out / "eval")
    log = [json.loads(l) for l in (out / "train" / "train_log.jsonl").read_text().splitlines()]
    return {"rank1": res["rank1"], "mAP": res["mAP"], "epochs": log}


def write_table(path: Path, header: list, rows: list):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(str(v) for v in r) + "\n")
    print(Path(path).read_text())
