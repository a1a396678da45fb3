"""End-to-end smoke run: synthesize, train 5 epochs, evaluate VIS gallery vs IR queries."""

import argparse
import json
import logging

from xbodyid.harness.experiments import rerun, smoke_run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", help="run directory (must not exist)")
    ap.add_argument("--rerun-from", help="reproduce a previous smoke run from its config.json")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    metrics = rerun(args.rerun_from, args.out) if args.rerun_from else smoke_run(args.out)
    print(json.dumps({"rank1": metrics["rank1"], "mAP": metrics["mAP"],
                      "minutes": round(metrics["seconds"]["total"] / 60, 2)}, indent=2))


if __name__ == "__main__":
    main()
