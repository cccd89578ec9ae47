"""CLEAR-MOT scores for learned, random and full sensing on held-out videos.

    python3 scripts/run_tracking.py [--config configs/tracking.toml] [--seeds 0 1 2]
"""

import argparse
import csv
import logging
from pathlib import Path

from saccades.config import load_config
from saccades.experiments import eval_track, fit_objectness, fit_saccade, load_videos, split

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=ROOT / "configs" / "tracking.toml")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", default=ROOT / "runs" / "tracking")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in args.seeds:
        cfg = load_config(args.config, [f"seed={seed}"])
        train_v, test_v = split(load_videos(cfg), cfg.dataset.n_test)
        saccade = fit_saccade(cfg, train_v)[0] if "learned" in cfg.tracking.policies else None
        result = eval_track(cfg, test_v, fit_objectness(cfg, train_v), saccade)
        for policy, t in result.tallies.items():
            rows.append((seed, policy, t.mota, t.motp, t.misses, t.false_positives, t.id_switches))
            print(f"seed {seed} {policy:8s} MOTA {t.mota:+.3f} MOTP {t.motp:.3f}")
    with (out / "tracking.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "policy", "mota", "motp", "misses", "false_positives", "id_switches"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
