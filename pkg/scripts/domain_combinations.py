"""Train on VIS plus subsets of the infrared bands and evaluate every query band."""

import argparse
from pathlib import Path

from _common import base_config, ensure_data, train_and_eval, write_table

COMBOS = [("VIS", "SWIR"), ("VIS", "MWIR"), ("VIS", "LWIR"), ("VIS", "SWIR", "MWIR", "LWIR")]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", type=Path)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--tiny", action="store_true", help="small model and data, for a quick check")
    args = ap.parse_args()
    rows = []
    for combo in COMBOS:
        # K = 4 splits evenly over two or four training domains
        cfg = base_config(args.tiny, seed=args.seed, train={"domains": list(combo)})
        manifest = ensure_data(cfg, args.out)
        res = train_and_eval(cfg, manifest, args.out / "+".join(combo))
        rows.append(["+".join(combo)] + [f"{res['rank1'][d]:.3f}" for d in ("SWIR", "MWIR", "LWIR")])
    write_table(args.out / "domains.csv", ["train_domains", "rank1_SWIR", "rank1_MWIR", "rank1_LWIR"], rows)


if __name__ == "__main__":
    main()
