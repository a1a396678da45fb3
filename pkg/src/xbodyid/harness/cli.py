"""Command-line entry point: synth, ingest, train, eval, stats, heatmap."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..data.ingest import ingest_detections
from ..data.manifest import save_manifest
from ..eval.features import load_feature_store
from ..eval.metrics import cosine_similarity_matrix
from ..eval.protocol import ProtocolConfig
from ..training.losses import MiningRecord
from ..training.mining import mining_statistics
from ..training.trainer import read_train_log
from . import experiments, plots
from .config import RunConfig, load_config_file, set_key
from .runs import new_run_dir, run_directory

log = logging.getLogger("xbodyid")


def _base_config(args) -> dict:
    cfg = load_config_file(args.config) if getattr(args, "config", None) else {}
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    for item in getattr(args, "set", None) or []:
        key, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        set_key(cfg, key, value)
    return cfg


def _out(args, command: str, seed: int) -> Path:
    return Path(args.out) if args.out else new_run_dir(command, seed)


def cmd_synth(args) -> int:
    cfg = _base_config(args)
    for flag, key in (("subjects", "n_subjects"), ("test_subjects", "n_test_subjects"),
                      ("per_domain", "images_per_subject_per_domain"), ("height", "image_height"),
                      ("width", "image_width")):
        v = getattr(args, flag)
        if v is not None:
            set_key(cfg, f"synth.{key}", v)
    rc = RunConfig.from_dict(cfg)
    rc.synthetic()  # validate before touching disk
    path = experiments.synthesize(rc, _out(args, "synth", rc.seed))
    print(path)
    return 0


def cmd_ingest(args) -> int:
    manifest, summary = ingest_detections(args.detections, threshold=args.threshold)
    out = save_manifest(manifest, args.out)
    print(f"{out}: {summary.labelled} labelled of {summary.bodies} bodies in {summary.frames} frames "
          f"({summary.dropped} dropped)")
    return 0


def _parse_lora(spec: str) -> dict:
    out = {}
    for part in spec.split(","):
        k, _, v = part.partition("=")
        if k not in ("rank", "alpha"):
            raise ValueError(f"bad --lora entry {part!r}; use rank=R[,alpha=A]")
        out[k] = int(v) if k == "rank" else float(v)
    return out


def cmd_train(args) -> int:
    cfg = _base_config(args)
    if args.sampler:
        set_key(cfg, "train.batch.domain_aware", args.sampler == "domain-aware")
    if args.domains:
        set_key(cfg, "train.domains", [d.strip() for d in args.domains.split(",") if d.strip()])
    if args.subjects is not None:
        set_key(cfg, "train.subjects", args.subjects)
    if args.lora:
        cfg["lora"] = _parse_lora(args.lora)
    for flag, key in (("epochs", "train.epochs"), ("lr", "train.lr"), ("P", "train.batch.P"),
                      ("K", "train.batch.K"), ("depth", "model.depth")):
        v = getattr(args, flag)
        if v is not None:
            set_key(cfg, key, v)
    rc = RunConfig.from_dict(cfg)
    out = experiments.train_run(rc, args.data, _out(args, "train", rc.seed), init_checkpoint=args.init)
    print(out)
    return 0


def cmd_eval(args) -> int:
    cfg = _base_config(args)
    proto = dict(cfg.get("protocol", {}))
    if args.gallery:
        proto["gallery_domain"] = args.gallery
    if args.queries:
        proto["query_domains"] = args.queries.split(",")
    if args.per_image:
        proto["mode"] = "per-image"
    checkpoint = args.checkpoint
    if args.run:
        checkpoint = Path(args.run) / "model.pt"
    data = args.data
    if data is None and args.run:
        run_cfg = json.loads((Path(args.run) / "config.json").read_text())
        data = (Path(args.run) / run_cfg["data"]).resolve()
    if data is None:
        raise ValueError("--data is required unless --run points at a training run")
    seed = cfg.get("seed", 0)
    result = experiments.eval_run(checkpoint=checkpoint, features=args.features, manifest_path=data,
                                  mode=args.mode, protocol=ProtocolConfig(**proto),
                                  out_dir=_out(args, f"eval-{args.mode}", seed), seed=seed)
    if args.mode == "protocol":
        for d, v in result["rank1"].items():
            print(f"{d}\trank1={v:.4f}")
    elif args.mode == "matrix":
        print("gallery\\query\t" + "\t".join(result["domains"]))
        for d, row in zip(result["domains"], result["matrix"]):
            print(d + "\t" + "\t".join("-" if v is None else f"{v:.4f}" for v in row))
    else:
        for r in result["rows"]:
            print(" + ".join(r["regions"]) + "\t" + "\t".join(f"{d}={v:.4f}" for d, v in r["rank1"].items()))
    return 0


def recount_mining(path) -> dict[int, object]:
    """MiningStats per epoch recomputed from stored per-batch records."""
    by_epoch: dict[int, list] = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            obj = json.loads(line)
            by_epoch.setdefault(obj["epoch"], []).append(MiningRecord.from_json(obj))
    return {e: mining_statistics(recs) for e, recs in sorted(by_epoch.items())}


def cmd_stats(args) -> int:
    run = Path(args.run)
    epochs = read_train_log(run / "train_log.jsonl")
    records = run / "mining_records.jsonl"
    if records.exists():
        recount = recount_mining(records)
        for e in epochs:
            s = recount[e.epoch]
            if (s.pct_hard_pos_cross_domain, s.pct_hard_neg_same_domain) != \
                    (e.pct_hard_pos_cross_domain, e.pct_hard_neg_same_domain):
                raise RuntimeError(f"epoch {e.epoch}: stored mining records disagree with the log")
    out = Path(args.out) if args.out else run / "stats"
    with run_directory(out) as stage:
        with open(stage / "mining_stats.csv", "w") as fh:
            fh.write("epoch,pct_hard_pos_cross_domain,pct_hard_neg_same_domain\n")
            for e in epochs:
                fh.write(f"{e.epoch},{e.pct_hard_pos_cross_domain!r},{e.pct_hard_neg_same_domain!r}\n")
        plots.plot_mining_stats([e.epoch + 1 for e in epochs], [e.pct_hard_pos_cross_domain for e in epochs],
                                [e.pct_hard_neg_same_domain for e in epochs], stage / "mining_stats.png")
    print(out / "mining_stats.csv")
    return 0


def cmd_heatmap(args) -> int:
    feats, meta = load_feature_store(args.features)
    ids = args.ids.split(",") if args.ids else [m["media_id"] for m in meta]
    if len(ids) < 2:
        raise ValueError("need at least two media for a heatmap")
    missing = [i for i in ids if i not in feats]
    if missing:
        raise ValueError(f"media not in feature store: {missing}")
    sim = cosine_similarity_matrix(np.stack([feats[i] for i in ids]), np.stack([feats[i] for i in ids]), ids, ids)
    out = Path(args.out) if args.out else new_run_dir("heatmap", 0)
    with run_directory(out) as stage:
        sim.to_csv(stage / "heatmap.csv")
        dom = {m["media_id"]: m.get("domain", "") for m in meta}
        plots.plot_heatmap(sim.scores, [f"{i} ({dom.get(i, '')})" for i in ids], stage / "heatmap.png")
    print(out / "heatmap.png")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xbodyid", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help="output directory (default: $XBODYID_OUTPUT_ROOT/<command>-...)"):
        sp.add_argument("--config", help="JSON or YAML config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key, e.g. train.lr=1e-4")
        sp.add_argument("--out", help=out_help)

    s = sub.add_parser("synth", help="generate a synthetic four-domain dataset")
    common(s)
    s.add_argument("--subjects", type=int)
    s.add_argument("--test-subjects", type=int)
    s.add_argument("--per-domain", type=int)
    s.add_argument("--height", type=int)
    s.add_argument("--width", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", help="label body detections by face overlap and write a manifest")
    s.add_argument("detections")
    s.add_argument("--out", required=True)
    s.add_argument("--threshold", type=float, default=0.75)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("train", help="train or finetune a model")
    common(s)
    s.add_argument("--data", required=True, help="manifest.jsonl")
    s.add_argument("--sampler", choices=["domain-aware", "random"])
    s.add_argument("--domains", help="comma-separated training domains, e.g. VIS,SWIR")
    s.add_argument("--subjects", type=int, help="number of training identities to keep")
    s.add_argument("--lora", help="adapter-only training, e.g. rank=8 or rank=8,alpha=16")
    s.add_argument("--init", help="checkpoint to start from")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--P", type=int)
    s.add_argument("--K", type=int)
    s.add_argument("--depth", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="identification protocol, domain matrix or local-feature ablation")
    common(s)
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--run", help="training run directory")
    src.add_argument("--checkpoint")
    src.add_argument("--features", help="feature store (.jsonl or .f32)")
    s.add_argument("--data", help="manifest.jsonl (defaults to the run's training data)")
    s.add_argument("--mode", choices=["protocol", "matrix", "ablation"], default="protocol")
    s.add_argument("--gallery")
    s.add_argument("--queries")
    s.add_argument("--per-image", action="store_true")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("stats", help="hard-mining statistics of a training run as CSV + plot")
    s.add_argument("--run", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("heatmap", help="pairwise cosine heatmap for selected media")
    s.add_argument("--features", required=True)
    s.add_argument("--ids", help="comma-separated media ids (default: all)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_heatmap)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError, RuntimeError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
