"""Learned-saccade training and test protocols, saccade traces and masked classifier training.

Training (per window of ``period`` frames, default 4): the GRU state is reset
to the trainable ``h0``, the first frame is consumed fully sensed, then for
each of the next ``period - 1`` frames the model emits a heatmap, is scored
with BCE against that frame's patch labels, and consumes the frame sensed
through its own top-k selection.  The window loss is the sum over steps and
is back-propagated through the whole unroll.

Testing: only frame 0 of a video is fully sensed and the state is reset once
per video.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .datagen import Video
from .metrics import UndefinedMetricError, auroc
from .models import (DenseConfig, ViTConfig, dense_forward, gru_step, initial_state,
                     patch_features, vit_logits_masked)
from .params import AdamConfig, ParamStore, adam_step
from .policies import POLICY_NAMES, as_budget, salient_fractions, topk_indices
from .sensor import BandwidthReport, CostModel, PatchGrid, PatchMask, patchify, readout_cost

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpisodeConfig:
    period: int = 4
    horizon: int = 3
    budget: float | int = 0.3
    tau_gt: float = 0.1
    target: str = "attention"   # or "foreground" (all object silhouettes)

    def __post_init__(self):
        if self.horizon != self.period - 1:
            raise ValueError("horizon must equal period - 1")
        if self.target not in ("attention", "foreground"):
            raise ValueError(f"unknown target {self.target!r}")


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 16

    def adam(self) -> AdamConfig:
        return AdamConfig(self.lr, tuple(self.betas), self.eps)


@dataclass
class EpochStats:
    loss: float
    accuracy: float | None = None
    n_items: int = 0
    skipped: int = 0


def patch_labels(attention_mask: np.ndarray, grid: PatchGrid, tau_gt: float = 0.1) -> np.ndarray:
    """1.0 where the salient-pixel fraction of a patch is at least ``tau_gt``."""
    return (salient_fractions(attention_mask, grid) >= tau_gt).astype(np.float64)


def video_labels(video: Video, grid: PatchGrid, tau_gt: float, target: str = "attention") -> np.ndarray:
    if video.gt is None:
        raise ValueError(f"{video.name} carries no ground truth")
    maps = video.gt.attention if target == "attention" else video.gt.foreground()
    return np.stack([patch_labels(m, grid, tau_gt) for m in maps])


def _adam(store: ParamStore, optim: OptimConfig) -> None:
    adam_step(store, optim.lr, tuple(optim.betas), optim.eps)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


# -- saccade training -------------------------------------------------------------------


def window_loss(patches: np.ndarray, labels: np.ndarray, store: ParamStore, k: int,
                channels: int) -> T.Tensor:
    """Summed BCE over the predicted steps of a batch of windows.

    ``patches`` is ``(B, period, N, D)`` and ``labels`` ``(B, period, N)``; frame
    0 of every window is fully sensed.  The return value is the mean over the
    batch of per-window losses.
    """
    b, period, n, _ = patches.shape
    sensed = np.ones((b, n), dtype=bool)
    h = initial_state(store, b)
    total = None
    for step in range(1, period):
        x = T.Tensor(patch_features(patches[:, step - 1], sensed, channels))
        h, logits = gru_step(x, h, store)
        heat = T.sigmoid(logits)
        loss = T.bce(heat, labels[:, step])
        total = loss if total is None else total + loss
        if step < period - 1:
            sensed = np.zeros((b, n), dtype=bool)
            np.put_along_axis(sensed, topk_indices(heat.data, k), True, axis=1)
    return total


def train_saccade_epoch(videos: Sequence[Video], store: ParamStore, grid: PatchGrid,
                        episode: EpisodeConfig, optim: OptimConfig, seed) -> EpochStats:
    """One pass over all full-sense windows of ``videos`` (seeded shuffle)."""
    rng = _rng(seed)
    k = as_budget(episode.budget).resolve(grid.n_patches)
    windows, patches, labels, skipped = [], [], [], 0
    for v in videos:
        if len(v) < episode.period:
            skipped += 1
            patches.append(None)
            labels.append(None)
            continue
        patches.append(patchify(v.frames, grid))
        labels.append(video_labels(v, grid, episode.tau_gt, episode.target))
        windows += [(len(patches) - 1, s) for s in range(0, len(v) - episode.period + 1, episode.period)]
    if skipped:
        log.warning("skipped %d videos shorter than %d frames", skipped, episode.period)
    if not windows:
        return EpochStats(float("nan"), n_items=0, skipped=skipped)
    channels = videos[0].frames.shape[-1]
    order = rng.permutation(len(windows))
    total, count = 0.0, 0
    for start in range(0, len(order), optim.batch_size):
        batch = [windows[i] for i in order[start:start + optim.batch_size]]
        px = np.stack([patches[v][s:s + episode.period] for v, s in batch])
        lab = np.stack([labels[v][s:s + episode.period] for v, s in batch])
        store.zero_grads()
        loss = window_loss(px, lab, store, k, channels)
        loss.backward()
        _adam(store, optim)
        total += loss.item() * len(batch)
        count += len(batch)
    return EpochStats(total / count, n_items=count, skipped=skipped)


def evaluate_window_loss(videos: Sequence[Video], store: ParamStore, grid: PatchGrid,
                         episode: EpisodeConfig) -> float:
    """Mean window loss without updating parameters."""
    k = as_budget(episode.budget).resolve(grid.n_patches)
    total, count = 0.0, 0
    with T.no_grad():
        for v in videos:
            if len(v) < episode.period:
                continue
            px = patchify(v.frames, grid)
            lab = video_labels(v, grid, episode.tau_gt, episode.target)
            starts = range(0, len(v) - episode.period + 1, episode.period)
            batch_px = np.stack([px[s:s + episode.period] for s in starts])
            batch_lab = np.stack([lab[s:s + episode.period] for s in starts])
            total += window_loss(batch_px, batch_lab, store, k, v.frames.shape[-1]).item() * len(starts)
            count += len(starts)
    return total / count


# -- saccade inference and traces -------------------------------------------------------------


@dataclass
class TraceEntry:
    frame: int
    mask: np.ndarray                   # sensed patch indices, ascending
    heatmap: np.ndarray | None         # per-patch scores; None for the fully sensed first frame
    bandwidth: BandwidthReport
    labels: np.ndarray | None = None

    def to_record(self) -> dict:
        rec = {
            "frame": self.frame,
            "mask": [int(i) for i in self.mask],
            "heatmap": None if self.heatmap is None else [float(s) for s in self.heatmap],
            "bandwidth": self.bandwidth.to_dict(),
        }
        if self.labels is not None:
            rec["labels"] = [int(v) for v in self.labels]
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "TraceEntry":
        return cls(
            frame=int(rec["frame"]),
            mask=np.asarray(rec["mask"], dtype=np.int64),
            heatmap=None if rec["heatmap"] is None else np.asarray(rec["heatmap"], dtype=np.float64),
            bandwidth=BandwidthReport(**rec["bandwidth"]),
            labels=None if rec.get("labels") is None else np.asarray(rec["labels"], dtype=np.float64),
        )


@dataclass
class SaccadeTrace:
    grid: PatchGrid
    entries: list[TraceEntry] = field(default_factory=list)
    video: str = "video"

    def __len__(self) -> int:
        return len(self.entries)

    def masks(self) -> list[PatchMask]:
        return [PatchMask.from_indices(self.grid, e.mask) for e in self.entries]

    def sensed_array(self) -> np.ndarray:
        return np.stack([m.sensed for m in self.masks()])

    @property
    def pixels_read(self) -> int:
        return sum(e.bandwidth.pixels_read for e in self.entries)

    @property
    def pixels_total(self) -> int:
        return sum(e.bandwidth.pixels_total for e in self.entries)

    def with_labels(self, labels: np.ndarray) -> "SaccadeTrace":
        labels = np.asarray(labels)
        if len(labels) != len(self.entries):
            raise ValueError("one label row per traced frame is required")
        entries = [TraceEntry(e.frame, e.mask, e.heatmap, e.bandwidth, labels[i])
                   for i, e in enumerate(self.entries)]
        return SaccadeTrace(self.grid, entries, self.video)

    def frame_aurocs(self) -> list[float]:
        """Heatmap AUROC per predicted frame; frames with single-class labels are skipped."""
        out = []
        for e in self.entries:
            if e.heatmap is None or e.labels is None:
                continue
            try:
                out.append(auroc(e.heatmap, e.labels))
            except UndefinedMetricError:
                continue
        return out

    def write_jsonl(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(json.dumps(e.to_record(), sort_keys=True) + "\n")

    @classmethod
    def read_jsonl(cls, path, grid: PatchGrid, video: str = "video") -> "SaccadeTrace":
        with Path(path).open(encoding="utf-8") as fh:
            entries = [TraceEntry.from_record(json.loads(line)) for line in fh if line.strip()]
        return cls(grid, entries, video)


def infer_saccade_video(video: Video | np.ndarray, store: ParamStore, grid: PatchGrid, budget,
                        cost_model: CostModel | None = None) -> SaccadeTrace:
    """Run the test-time sensing protocol over one video.  Ground truth is never read."""
    frames = video.frames if isinstance(video, Video) else np.asarray(video)
    name = video.name if isinstance(video, Video) else "video"
    if len(frames) == 0:
        raise ValueError("cannot trace an empty video")
    channels = frames.shape[-1]
    k = as_budget(budget).resolve(grid.n_patches)
    patches = patchify(frames, grid)
    sensed = np.ones(grid.n_patches, dtype=bool)
    trace = SaccadeTrace(grid, video=name)
    trace.entries.append(TraceEntry(0, np.flatnonzero(sensed), None,
                                    readout_cost(PatchMask(grid, sensed), grid, channels, cost_model)))
    with T.no_grad():
        h = initial_state(store)
        for t in range(1, len(frames)):
            x = T.Tensor(patch_features(patches[t - 1][None], sensed[None], channels)[0])
            h, logits = gru_step(x, h, store)
            heat = T.sigmoid(logits).data
            idx = topk_indices(heat, k)
            sensed = np.zeros(grid.n_patches, dtype=bool)
            sensed[idx] = True
            trace.entries.append(TraceEntry(t, idx, heat.copy(),
                                            readout_cost(PatchMask(grid, sensed), grid, channels, cost_model)))
    return trace


def train_saccade(train_videos: Sequence[Video], store: ParamStore, grid: PatchGrid,
                  episode: EpisodeConfig, optim: OptimConfig, epochs: int, seed: int) -> list[EpochStats]:
    rng = np.random.default_rng(seed)
    return [train_saccade_epoch(train_videos, store, grid, episode, optim, rng) for _ in range(epochs)]


def mean_trace_auroc(videos: Sequence[Video], store: ParamStore, grid: PatchGrid, budget,
                     tau_gt: float = 0.1, target: str = "attention") -> float:
    scores = []
    for v in videos:
        trace = infer_saccade_video(v.without_gt(), store, grid, budget)
        trace = trace.with_labels(video_labels(v, grid, tau_gt, target))
        scores.extend(trace.frame_aurocs())
    return float(np.mean(scores))


# -- classification under masks -------------------------------------------------------------


@dataclass
class ClassificationSet:
    frames: np.ndarray               # (B, H, W, C)
    labels: np.ndarray               # (B,)
    saliency: np.ndarray | None = None   # (B, H, W) attention masks

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def from_videos(cls, videos: Sequence[Video]) -> "ClassificationSet":
        return cls(
            frames=np.concatenate([v.frames for v in videos]),
            labels=np.concatenate([v.gt.labels for v in videos]),
            saliency=np.concatenate([v.gt.attention for v in videos]),
        )

    def subset(self, idx) -> "ClassificationSet":
        return ClassificationSet(self.frames[idx], self.labels[idx],
                                 None if self.saliency is None else self.saliency[idx])


def policy_masks(policy: str, data: ClassificationSet, grid: PatchGrid, budget=1.0, seed=0,
                 threshold: float = 0.5, learned: np.ndarray | None = None) -> np.ndarray:
    """``(B, N)`` sensed masks for every frame of ``data`` under a named policy."""
    n, b = grid.n_patches, len(data)
    if policy == "oracle":
        policy = "oracle-topk"
    if policy not in POLICY_NAMES:
        raise ValueError(f"unknown policy {policy!r}; expected one of {', '.join(POLICY_NAMES)}")
    if policy == "full":
        return np.ones((b, n), dtype=bool)
    if policy == "learned":
        if learned is None:
            raise ValueError("the learned policy needs masks from saccade traces")
        learned = np.asarray(learned, dtype=bool)
        if learned.shape != (b, n):
            raise ValueError(f"learned masks have shape {learned.shape}, expected {(b, n)}")
        return learned
    out = np.zeros((b, n), dtype=bool)
    if policy == "random":
        k = as_budget(budget).resolve(n)
        rng = _rng(seed)
        for i in range(b):
            out[i, rng.choice(n, size=k, replace=False)] = True
        return out
    if data.saliency is None:
        raise ValueError("oracle policies need saliency maps")
    frac = np.stack([salient_fractions(s, grid) for s in data.saliency])
    if policy == "oracle-topk":
        np.put_along_axis(out, topk_indices(frac, as_budget(budget).resolve(n)), True, axis=1)
        return out
    return frac >= threshold if threshold > 0 else frac > 0


def zero_fill_batch(frames: np.ndarray, sensed: np.ndarray, grid: PatchGrid) -> np.ndarray:
    p = grid.patch_size
    cells = sensed.reshape(len(sensed), grid.rows, grid.cols)
    pix = np.repeat(np.repeat(cells, p, axis=1), p, axis=2)
    return np.where(pix[..., None], frames, 0.0)


def classifier_logits(model_cfg, store: ParamStore, frames: np.ndarray, sensed: np.ndarray,
                      grid: PatchGrid) -> T.Tensor:
    if isinstance(model_cfg, ViTConfig):
        return vit_logits_masked(patchify(frames, grid), sensed, store, model_cfg)
    if isinstance(model_cfg, DenseConfig):
        return dense_forward(zero_fill_batch(frames, sensed, grid), store, model_cfg)
    raise TypeError(f"unknown classifier config {type(model_cfg).__name__}")


def classify(model_cfg, store: ParamStore, frames: np.ndarray, sensed: np.ndarray, grid: PatchGrid,
             batch_size: int = 256) -> np.ndarray:
    preds = []
    with T.no_grad():
        for s in range(0, len(frames), batch_size):
            logits = classifier_logits(model_cfg, store, frames[s:s + batch_size], sensed[s:s + batch_size], grid)
            preds.append(np.argmax(logits.data, axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def train_classifier_epoch(data: ClassificationSet, store: ParamStore, model_cfg, grid: PatchGrid,
                           policy: str, budget, optim: OptimConfig, seed,
                           threshold: float = 0.5, learned: np.ndarray | None = None) -> EpochStats:
    """One shuffled minibatch pass of cross-entropy training on policy-masked frames.

    Random masks are redrawn every epoch from ``seed``.  Reported accuracy is
    measured on the minibatches as they are trained.
    """
    rng = _rng(seed)
    sensed = policy_masks(policy, data, grid, budget, rng, threshold, learned)
    order = rng.permutation(len(data))
    total, correct = 0.0, 0
    for s in range(0, len(order), optim.batch_size):
        idx = order[s:s + optim.batch_size]
        store.zero_grads()
        logits = classifier_logits(model_cfg, store, data.frames[idx], sensed[idx], grid)
        loss = T.cross_entropy(logits, data.labels[idx])
        loss.backward()
        _adam(store, optim)
        total += loss.item() * len(idx)
        correct += int((np.argmax(logits.data, axis=1) == data.labels[idx]).sum())
    return EpochStats(total / len(data), correct / len(data), n_items=len(data))


def train_classifier(data: ClassificationSet, store: ParamStore, model_cfg, grid: PatchGrid,
                     policy: str, budget, optim: OptimConfig, epochs: int, seed: int,
                     threshold: float = 0.5, learned: np.ndarray | None = None) -> list[EpochStats]:
    rng = np.random.default_rng(seed)
    return [train_classifier_epoch(data, store, model_cfg, grid, policy, budget, optim, rng, threshold, learned)
            for _ in range(epochs)]
