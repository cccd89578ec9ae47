"""Train the saccade predictor and score held-out heatmaps.

    python3 scripts/run_saccade.py [--config configs/saccade.toml] [--seeds 0 1 2]
"""

import argparse
import logging
from pathlib import Path

import numpy as np

from saccades.config import load_config
from saccades.experiments import eval_saccade, fit_saccade, load_videos, split
from saccades.io import emit_report

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=ROOT / "configs" / "saccade.toml")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--budgets", type=float, nargs="+", default=None,
                    help="also sweep the selection budget (one model per budget)")
    ap.add_argument("--out", default=ROOT / "runs" / "saccade")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for seed in args.seeds:
        for budget in args.budgets or [None]:
            extra = [] if budget is None else [f"saccade.budget={budget}"]
            cfg = load_config(args.config, [f"seed={seed}"] + extra)
            train_v, test_v = split(load_videos(cfg), cfg.dataset.n_test)
            store, hist = fit_saccade(cfg, train_v)
            result = eval_saccade(cfg, store, test_v)
            tag = f"b{cfg.saccade.budget:g}_s{seed}"
            emit_report(result.report, out / f"auroc_{tag}.csv")
            print(f"seed {seed} budget {cfg.saccade.budget:g}: loss {hist[0].loss:.3f} -> {hist[-1].loss:.3f}, "
                  f"mean AUROC {np.mean(result.aurocs):.4f}")


if __name__ == "__main__":
    main()
