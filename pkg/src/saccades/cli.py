"""Command-line experiment runner.

    saccades <subcommand> CONFIG [--set section.key=value ...] [--output DIR]

Every run writes into ``<output_dir>/<subcommand>/`` and finishes with a
``manifest.json`` listing the config, seed, code version and every file it
wrote.  A relative ``output_dir`` is resolved against ``$SACCADES_OUTPUT_ROOT``
when that variable is set.

Exit codes: 0 success, 1 usage error, 2 config error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .datagen import Video
from .experiments import (eval_classify, eval_saccade, eval_track, fit_classifier, fit_objectness, fit_saccade,
                          held_out_accuracy, load_videos, split)
from .io import DatasetError, emit_report, frame_to_u8, write_dataset, write_pnm
from .models import init_params
from .params import CheckpointError, ParamStore, load_checkpoint, save_checkpoint
from .saccade import ClassificationSet, infer_saccade_video, policy_masks, zero_fill_batch
from .sensor import PatchMask, readout_cost
from .tracking import write_tracks_csv

OUTPUT_ROOT_ENV = "SACCADES_OUTPUT_ROOT"
EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("saccades")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


class Run:
    """Output directory bookkeeping for one subcommand invocation."""

    def __init__(self, cfg: ExperimentConfig, command: str, output: str | None = None,
                 experiment: str = "experiment"):
        self.cfg = cfg
        self.command = command
        self.tag = f"{experiment}_s{cfg.seed}"   # embedded in metric report names
        base = Path(output or cfg.output_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not base.is_absolute():
            base = Path(root) / base
        self.dir = base / command
        self.dir.mkdir(parents=True, exist_ok=True)
        self.outputs: list[str] = []

    def path(self, name: str) -> Path:
        p = self.dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(name)
        return p

    def write_csv(self, name: str, header, rows) -> Path:
        p = self.path(name)
        with p.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([repr(v) if isinstance(v, float) else v for v in row])
        return p

    def write_json(self, name: str, obj) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        return p

    def finish(self) -> Path:
        self.path("config.toml").write_text(dump_config(self.cfg), encoding="utf-8")
        manifest = {
            "command": self.command,
            "seed": self.cfg.seed,
            "version": __version__,
            "config": self.cfg.to_dict(),
            "outputs": sorted(set(self.outputs)),
        }
        p = self.dir / "manifest.json"
        p.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        return p


def _check_store(store: ParamStore, expected: ParamStore, what: str) -> ParamStore:
    want = {k: v.data.shape for k, v in expected.items()}
    got = {k: v.data.shape for k, v in store.items()}
    if want != got:
        raise CheckpointError(f"{what} checkpoint does not match the configured model")
    return store


def _history_rows(hist):
    return [(i, h.loss, h.accuracy if h.accuracy is not None else "") for i, h in enumerate(hist)]


# -- subcommands -------------------------------------------------------------------------------


def cmd_gen_data(cfg: ExperimentConfig, run: Run) -> None:
    videos = load_videos(cfg)
    write_dataset(run.dir / "dataset", videos)
    for v in videos:
        run.outputs.extend(str(p.relative_to(run.dir)) for p in sorted((run.dir / "dataset" / v.name).rglob("*"))
                           if p.is_file())
    run.outputs.append("dataset/dataset.json")
    log.info("wrote %d videos to %s", len(videos), run.dir / "dataset")


def cmd_train_classifier(cfg: ExperimentConfig, run: Run) -> None:
    train_v, test_v = split(load_videos(cfg), cfg.dataset.n_test)
    train, test = ClassificationSet.from_videos(train_v), ClassificationSet.from_videos(test_v)
    store, hist = fit_classifier(cfg, train, cfg.policy.name, cfg.policy.budget)
    save_checkpoint(store, run.path(f"{cfg.model.kind}.ckpt"))
    run.write_csv("train_log.csv", ["epoch", "loss", "accuracy"], _history_rows(hist))
    acc = held_out_accuracy(cfg, store, test, cfg.policy.name, cfg.policy.budget)
    run.write_csv("heldout.csv", ["policy", "budget", "accuracy"], [(cfg.policy.name, cfg.policy.budget, acc)])
    log.info("held-out accuracy %.4f", acc)


def cmd_train_saccade(cfg: ExperimentConfig, run: Run) -> None:
    train_v, _ = split(load_videos(cfg), cfg.dataset.n_test)
    store, hist = fit_saccade(cfg, train_v)
    save_checkpoint(store, run.path("saccade.ckpt"))
    run.write_csv("loss.csv", ["epoch", "loss"], [(i, h.loss) for i, h in enumerate(hist)])


def _saccade_store(cfg: ExperimentConfig, train_v: list[Video]) -> ParamStore:
    if cfg.saccade.checkpoint:
        return _check_store(load_checkpoint(cfg.saccade.checkpoint), init_params(cfg.gru_config(), 0), "saccade")
    log.info("no saccade checkpoint configured; training one")
    return fit_saccade(cfg, train_v)[0]


def cmd_eval_classify(cfg: ExperimentConfig, run: Run) -> None:
    store = None
    if cfg.training.protocol == "shared" and cfg.model.checkpoint:
        store = _check_store(load_checkpoint(cfg.model.checkpoint), init_params(cfg.classifier_config(), 0),
                             "classifier")
    result = eval_classify(cfg, store=store)
    for report in result.reports:
        policy = report.metadata["policy"]
        emit_report(report, run.path(f"accuracy_{policy}_{run.tag}.csv"))
        emit_report(report, run.path(f"accuracy_{policy}_{run.tag}.json"))


def cmd_eval_saccade(cfg: ExperimentConfig, run: Run) -> None:
    train_v, test_v = split(load_videos(cfg), cfg.dataset.n_test)
    store = _saccade_store(cfg, train_v)
    result = eval_saccade(cfg, store, test_v)
    for v, trace in zip(test_v, result.traces):
        trace.write_jsonl(run.path(f"traces/{v.name}.jsonl"))
    emit_report(result.report, run.path(f"auroc_{run.tag}.csv"))
    emit_report(result.report, run.path(f"auroc_{run.tag}.json"))
    rows = [(v.name, len(t), t.pixels_read, t.pixels_total) for v, t in zip(test_v, result.traces)]
    run.write_csv("bandwidth.csv", ["video", "frames", "pixels_read", "pixels_total"], rows)
    log.info("mean heatmap AUROC %.4f", result.report.metadata["mean"])


def cmd_eval_track(cfg: ExperimentConfig, run: Run) -> None:
    train_v, test_v = split(load_videos(cfg), cfg.dataset.n_test)
    saccade = _saccade_store(cfg, train_v) if "learned" in cfg.tracking.policies else None
    detector = fit_objectness(cfg, train_v)
    save_checkpoint(detector, run.path("objectness.ckpt"))
    result = eval_track(cfg, test_v, detector, saccade)
    for (policy, name), rows in result.rows.items():
        write_tracks_csv(run.path(f"tracks/{policy}/{name}.csv"), rows)
    header = ["policy", "mota", "motp", "misses", "false_positives", "id_switches", "matches", "total_gt"]
    table = [(p, t.mota, t.motp, t.misses, t.false_positives, t.id_switches, t.matches, t.total_gt)
             for p, t in result.tallies.items()]
    run.write_csv(f"tracking_{run.tag}.csv", header, table)
    run.write_json(f"tracking_{run.tag}.json", {"report": result.report.to_dict(),
                                     "tallies": {r[0]: dict(zip(header[1:], r[1:])) for r in table}})


def cmd_mask_demo(cfg: ExperimentConfig, run: Run, max_frames: int = 8) -> None:
    videos = load_videos(cfg)
    train_v, test_v = split(videos, cfg.dataset.n_test)
    grid = cfg.grid()
    policy, budget = cfg.policy.name, cfg.policy.budget
    saccade = _saccade_store(cfg, train_v) if policy == "learned" else None
    rows = []
    for i, v in enumerate(test_v):
        n = min(len(v), max_frames)
        if policy == "learned":
            sensed = infer_saccade_video(v.without_gt(), saccade, grid, budget).sensed_array()[:n]
        else:
            data = ClassificationSet(v.frames[:n], v.gt.labels[:n], v.gt.attention[:n])
            sensed = policy_masks(policy, data, grid, budget, np.random.default_rng([cfg.seed, i]),
                                  cfg.policy.threshold)
        filled = zero_fill_batch(v.frames[:n], sensed, grid)
        for t in range(n):
            write_pnm(run.path(f"{v.name}/frame_{t:06d}.ppm"), frame_to_u8(v.frames[t]))
            write_pnm(run.path(f"{v.name}/masked_{t:06d}.ppm"), frame_to_u8(filled[t]))
            bw = readout_cost(PatchMask(grid, sensed[t]), grid, cfg.scene.channels)
            rows.append((v.name, t, int(sensed[t].sum()), bw.pixels_read, bw.fraction_sensed, bw.energy_estimate))
    run.write_csv("bandwidth.csv", ["video", "frame", "patches", "pixels_read", "fraction", "energy"], rows)


COMMANDS = {
    "gen-data": (cmd_gen_data, "write a synthetic dataset"),
    "train-classifier": (cmd_train_classifier, "train the ViT or dense classifier under a policy"),
    "train-saccade": (cmd_train_saccade, "train the recurrent saccade predictor"),
    "eval-classify": (cmd_eval_classify, "accuracy over budgets for each policy"),
    "eval-saccade": (cmd_eval_saccade, "trace held-out videos and score heatmap AUROC"),
    "eval-track": (cmd_eval_track, "detect and track under each policy; CLEAR-MOT scores"),
    "mask-demo": (cmd_mask_demo, "dump zero-filled frames for a policy"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="saccades", description="Saccade-driven sensing experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="subcommand", parser_class=_Parser)
    sub.required = True
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("config", help="TOML experiment config")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key, e.g. policy.budget=0.4 (repeatable)")
        p.add_argument("--output", help="output directory (overrides output_dir)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        run = Run(cfg, args.command, args.output, Path(args.config).stem)
        COMMANDS[args.command][0](cfg, run)
        run.finish()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, CheckpointError, OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(run.dir / "manifest.json")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
