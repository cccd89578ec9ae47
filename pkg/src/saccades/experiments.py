"""End-to-end pipelines shared by the command line, the scripts and the acceptance suite.

Every function is a pure function of its :class:`ExperimentConfig` (all
randomness is derived from ``cfg.seed``) and returns plain data; writing
files is left to the caller.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .datagen import Video, generate_videos
from .io import read_dataset
from .metrics import MetricReport, MotTally, clear_mot
from .models import init_params
from .params import ParamStore, load_checkpoint
from .policies import random_select
from .saccade import (ClassificationSet, EpisodeConfig, EpochStats, OptimConfig, SaccadeTrace, classify,
                      infer_saccade_video, policy_masks, train_classifier, train_saccade, video_labels)
from .sensor import PatchMask
from .tracking import Box, init_objectness, run_tracker, train_objectness

log = logging.getLogger(__name__)


def load_videos(cfg: ExperimentConfig) -> list[Video]:
    if cfg.dataset.path is not None:
        return read_dataset(cfg.dataset.path)
    return generate_videos(cfg.scene, cfg.dataset.n_videos)


def split(videos: list[Video], n_test: int) -> tuple[list[Video], list[Video]]:
    if not 0 < n_test < len(videos):
        raise ValueError(f"cannot hold out {n_test} of {len(videos)} videos")
    return videos[:-n_test], videos[-n_test:]


# -- classification -----------------------------------------------------------------------


def fit_classifier(cfg: ExperimentConfig, data: ClassificationSet, policy: str, budget: float,
                   seed: int | None = None) -> tuple[ParamStore, list[EpochStats]]:
    seed = cfg.seed if seed is None else seed
    model_cfg = cfg.classifier_config()
    store = init_params(model_cfg, seed)
    optim = OptimConfig(lr=cfg.training.lr, batch_size=cfg.training.batch_size)
    hist = train_classifier(data, store, model_cfg, cfg.grid(), policy, budget, optim,
                            cfg.training.epochs, seed, cfg.policy.threshold)
    return store, hist


def held_out_accuracy(cfg: ExperimentConfig, store: ParamStore, data: ClassificationSet, policy: str,
                      budget: float, seed: int | None = None) -> float:
    """Accuracy under ``policy``; random test masks use ``seed + 1`` so they differ from training."""
    seed = cfg.seed if seed is None else seed
    grid = cfg.grid()
    sensed = policy_masks(policy, data, grid, budget, seed + 1, cfg.policy.threshold)
    return float(np.mean(classify(cfg.classifier_config(), store, data.frames, sensed, grid) == data.labels))


@dataclass
class ClassifyResult:
    reports: list[MetricReport]
    histories: dict = field(default_factory=dict)   # (policy, budget) -> [EpochStats]


def eval_classify(cfg: ExperimentConfig, videos: list[Video] | None = None,
                  store: ParamStore | None = None) -> ClassifyResult:
    """Accuracy over ``policy.budgets`` for every policy in ``policy.policies``.

    ``per-level``: a fresh model is trained under each (policy, budget) and
    tested under the same policy.  ``shared``: one model (``store``, the
    configured checkpoint, or one trained on full frames) is tested at every
    budget.
    """
    videos = load_videos(cfg) if videos is None else videos
    train_v, test_v = split(videos, cfg.dataset.n_test)
    train, test = ClassificationSet.from_videos(train_v), ClassificationSet.from_videos(test_v)
    policies = cfg.policy.policies or (cfg.policy.name,)
    result = ClassifyResult([])
    if cfg.training.protocol == "shared" and store is None:
        if cfg.model.checkpoint:
            store = load_checkpoint(cfg.model.checkpoint)
        else:
            store, result.histories[("full", 1.0)] = fit_classifier(cfg, train, "full", 1.0)
    for policy in policies:
        values = []
        for b in cfg.policy.budgets:
            if cfg.training.protocol == "per-level":
                model, result.histories[(policy, b)] = fit_classifier(cfg, train, policy, b)
            else:
                model = store
            values.append(held_out_accuracy(cfg, model, test, policy, b))
            log.info("%s @ %.2f: accuracy %.4f", policy, b, values[-1])
        result.reports.append(MetricReport(
            f"accuracy-{policy}", list(cfg.policy.budgets), values,
            metadata={"model": cfg.model.kind, "policy": policy, "protocol": cfg.training.protocol,
                      "n_train": len(train), "n_test": len(test), "seed": cfg.seed}))
    return result


# -- saccades -------------------------------------------------------------------------------


def episode_config(cfg: ExperimentConfig) -> EpisodeConfig:
    s = cfg.saccade
    return EpisodeConfig(period=s.period, horizon=s.period - 1, budget=s.budget, tau_gt=s.tau_gt, target=s.target)


def fit_saccade(cfg: ExperimentConfig, train_videos: list[Video]) -> tuple[ParamStore, list[EpochStats]]:
    store = init_params(cfg.gru_config(), cfg.seed)
    optim = OptimConfig(lr=cfg.saccade.lr, batch_size=cfg.saccade.batch_size)
    hist = train_saccade(train_videos, store, cfg.grid(), episode_config(cfg), optim, cfg.saccade.epochs, cfg.seed)
    return store, hist


@dataclass
class SaccadeResult:
    traces: list[SaccadeTrace]
    aurocs: list[float]            # per held-out video, mean over its frames
    report: MetricReport


def eval_saccade(cfg: ExperimentConfig, store: ParamStore, test_videos: list[Video]) -> SaccadeResult:
    grid = cfg.grid()
    traces, aurocs = [], []
    for v in test_videos:
        trace = infer_saccade_video(v.without_gt(), store, grid, cfg.saccade.budget)
        trace = trace.with_labels(video_labels(v, grid, cfg.saccade.tau_gt, cfg.saccade.target))
        traces.append(trace)
        aurocs.append(float(np.mean(trace.frame_aurocs())))
    report = MetricReport("heatmap-auroc", list(range(len(test_videos))), aurocs, axis_name="video",
                          metadata={"videos": [v.name for v in test_videos], "mean": float(np.mean(aurocs)),
                                    "budget": cfg.saccade.budget, "target": cfg.saccade.target,
                                    "seed": cfg.seed})
    return SaccadeResult(traces, aurocs, report)


# -- tracking --------------------------------------------------------------------------------


def fit_objectness(cfg: ExperimentConfig, train_videos: list[Video]) -> ParamStore:
    stride = cfg.tracking.frame_stride
    frames = np.concatenate([v.frames[::stride] for v in train_videos])
    boxes = [[o.box for o in objs] for v in train_videos for objs in v.gt.objects[::stride]]
    grid = cfg.grid()
    store = init_objectness(grid.patch_size ** 2 * cfg.scene.channels, cfg.seed)
    train_objectness(store, frames, boxes, grid, cfg.tracking.objectness_epochs, cfg.tracking.objectness_lr)
    return store


def tracking_masks(cfg: ExperimentConfig, policy: str, video: Video, index: int,
                   saccade_store: ParamStore | None) -> list[PatchMask]:
    """Per-frame masks; every policy senses frame 0 fully, like the learned protocol."""
    grid = cfg.grid()
    budget = cfg.policy.budget
    if policy == "learned":
        if saccade_store is None:
            raise ValueError("the learned policy needs a trained saccade model")
        return infer_saccade_video(video.without_gt(), saccade_store, grid, budget).masks()
    if policy == "full":
        return [grid.full_mask() for _ in range(len(video))]
    if policy == "random":
        rng = np.random.default_rng([cfg.seed, index])
        return [grid.full_mask()] + [random_select(grid.n_patches, budget, rng, grid) for _ in range(len(video) - 1)]
    data = ClassificationSet(video.frames, video.gt.labels, video.gt.foreground())
    sensed = policy_masks(policy, data, grid, budget, cfg.seed, cfg.policy.threshold)
    return [grid.full_mask()] + [PatchMask(grid, s) for s in sensed[1:]]


def gt_rows(video: Video) -> list[tuple[int, int, Box]]:
    return [(f, o.track_id, o.box) for f, objs in enumerate(video.gt.objects) for o in objs]


@dataclass
class TrackResult:
    tallies: dict                 # policy -> MotTally summed over videos
    rows: dict                    # (policy, video name) -> tracker rows
    report: MetricReport


def eval_track(cfg: ExperimentConfig, test_videos: list[Video], detector: ParamStore,
               saccade_store: ParamStore | None) -> TrackResult:
    grid = cfg.grid()
    tallies, rows = {}, {}
    for policy in cfg.tracking.policies:
        tally = MotTally()
        for i, v in enumerate(test_videos):
            masks = tracking_masks(cfg, policy, v, i, saccade_store)
            _, out = run_tracker(v.frames, masks, grid, detector, cfg.tracking.iou_min, cfg.tracking.max_misses)
            rows[(policy, v.name)] = out
            tally = tally + clear_mot(gt_rows(v), out, cfg.tracking.eval_iou)[2]
        tallies[policy] = tally
    names = list(cfg.tracking.policies)
    report = MetricReport(
        "tracking", list(range(len(names))), [tallies[p].mota for p in names], axis_name="policy",
        metadata={"policies": names, "mota": [tallies[p].mota for p in names],
                  "motp": [tallies[p].motp for p in names], "budget": cfg.policy.budget,
                  "eval_iou": cfg.tracking.eval_iou, "seed": cfg.seed})
    return TrackResult(tallies, rows, report)
