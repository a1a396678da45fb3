"""Domain-aware vs random P x K batches: retrieval accuracy and mining statistics per epoch."""

import argparse
from pathlib import Path

from _common import base_config, ensure_data, train_and_eval, write_table


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", type=Path)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--tiny", action="store_true", help="small model and data, for a quick check")
    args = ap.parse_args()
    rows = []
    for domain_aware in (True, False):
        cfg = base_config(args.tiny, seed=args.seed, train={"batch": {"domain_aware": domain_aware}})
        manifest = ensure_data(cfg, args.out)
        name = "domain_aware" if domain_aware else "random"
        res = train_and_eval(cfg, manifest, args.out / name)
        for e in res["epochs"]:
            rows.append([name, e["epoch"], f"{e['pct_hard_pos_cross_domain']:.1f}",
                         f"{e['pct_hard_neg_same_domain']:.1f}", "", "", ""])
        rows.append([name, "final", "", ""] + [f"{res['rank1'][d]:.3f}" for d in ("SWIR", "MWIR", "LWIR")])
    write_table(args.out / "samplers.csv", ["sampler", "epoch", "pct_hard_pos_cross", "pct_hard_neg_same",
                                            "rank1_SWIR", "rank1_MWIR", "rank1_LWIR"], rows)


if __name__ == "__main__":
    main()
