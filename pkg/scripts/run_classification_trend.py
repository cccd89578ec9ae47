"""Accuracy vs sensing budget for the token ViT and the dense baseline.

    python3 scripts/run_classification_trend.py [--config configs/classify.toml] [--seeds 0 1 2]

Writes one CSV per (model, policy, seed) plus a summary of the accuracy drop
at each budget relative to full sensing.
"""

import argparse
import csv
import logging
from pathlib import Path

from saccades.config import load_config
from saccades.experiments import eval_classify
from saccades.io import emit_report

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=ROOT / "configs" / "classify.toml")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--models", nargs="+", default=["vit", "dense"])
    ap.add_argument("--out", default=ROOT / "runs" / "classification_trend")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for seed in args.seeds:
        for kind in args.models:
            cfg = load_config(args.config, [f"seed={seed}", f"model.kind='{kind}'",
                                            "policy.policies=['full', 'random', 'oracle']"])
            for report in eval_classify(cfg).reports:
                policy = report.metadata["policy"]
                emit_report(report, out / f"accuracy_{kind}_{policy}_s{seed}.csv")
                for b, v in zip(report.axis, report.values):
                    summary.append((seed, kind, policy, b, v))
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "model", "policy", "budget", "accuracy"])
        w.writerows(summary)
    for row in summary:
        print(*row, sep="\t")


if __name__ == "__main__":
    main()
