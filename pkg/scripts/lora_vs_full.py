"""Adapter finetuning vs full finetuning as the number of training subjects shrinks.

Both start from the same checkpoint, pretrained on a disjoint synthetic population.
"""

import argparse
from pathlib import Path

from _common import base_config, ensure_data, train_and_eval, write_table
from xbodyid.harness.experiments import train_run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", type=Path)
    ap.add_argument("--subjects", default="5,10,20")
    ap.add_argument("--rank", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--tiny", action="store_true", help="small model and data, for a quick check")
    args = ap.parse_args()

    pre_cfg = base_config(args.tiny, seed=args.seed + 100)
    pre_manifest = ensure_data(pre_cfg, args.out / "pretrain")
    train_run(pre_cfg, pre_manifest, args.out / "pretrain" / "train")
    init = args.out / "pretrain" / "train" / "model.pt"

    cfg = base_config(args.tiny, seed=args.seed)
    manifest = ensure_data(cfg, args.out)
    rows = []
    for n in (int(s) for s in args.subjects.split(",")):
        for mode in ("full", "lora"):
            run_cfg = base_config(args.tiny, seed=args.seed, train={"subjects": n},
                                  lora={"rank": args.rank, "alpha": 2 * args.rank} if mode == "lora" else None)
            res = train_and_eval(run_cfg, manifest, args.out / f"{mode}_{n}", init=init)
            rows.append([mode, n] + [f"{res['rank1'][d]:.3f}" for d in ("SWIR", "MWIR", "LWIR")])
    write_table(args.out / "lora_vs_full.csv", ["mode", "subjects", "rank1_SWIR", "rank1_MWIR", "rank1_LWIR"], rows)


if __name__ == "__main__":
    main()
