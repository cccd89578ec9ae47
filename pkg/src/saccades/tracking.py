"""Per-patch objectness detector over sensed patches and a greedy IoU tracker."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from . import tensor as T
from .params import ParamStore, adam_step
from .sensor import Frame, PatchGrid, PatchMask, patchify


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, top-left origin, in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box needs positive size, got w={self.w} h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]

    def clip(self, width: int, height: int) -> "Box":
        x0, y0 = max(self.x, 0.0), max(self.y, 0.0)
        x1, y1 = min(self.x + self.w, width), min(self.y + self.h, height)
        return Box(x0, y0, x1 - x0, y1 - y0)


def iou(a: Box, b: Box) -> float:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True)
class Detection:
    box: Box
    confidence: float
    frame: int = 0
    label: int = 0

    def __post_init__(self):
        if not np.isfinite(self.confidence):
            raise ValueError("detection confidence must be finite")


@dataclass
class Track:
    track_id: int
    history: list[tuple[int, Box]] = field(default_factory=list)
    active: bool = True
    misses: int = 0

    @property
    def last_box(self) -> Box:
        return self.history[-1][1]

    def extend(self, frame: int, box: Box) -> None:
        if self.history and frame <= self.history[-1][0]:
            raise ValueError(f"track {self.track_id}: frame {frame} does not advance")
        self.history.append((frame, box))


# -- objectness head ------------------------------------------------------------


def init_objectness(patch_dim: int, seed: int, prefix: str = "obj") -> ParamStore:
    rng = np.random.default_rng(seed)
    bound = np.sqrt(6.0 / (patch_dim + 1))
    store = ParamStore()
    store.add(f"{prefix}.w", rng.uniform(-bound, bound, size=(patch_dim, 1)))
    store.add(f"{prefix}.b", np.zeros(1))
    return store


def objectness_logits(pixels: T.Tensor, store: ParamStore, prefix: str = "obj") -> T.Tensor:
    """Logistic head over patch pixel vectors ``(..., P*P*C)`` -> ``(..., 1)``."""
    return T.linear(pixels, store[f"{prefix}.w"], store[f"{prefix}.b"])


def objectness_scores(pixels: np.ndarray, store: ParamStore, prefix: str = "obj") -> np.ndarray:
    return T.sigmoid(objectness_logits(T.Tensor(pixels), store, prefix)).data[..., 0]


def box_patch_labels(boxes: Sequence[Box], grid: PatchGrid, min_cover: float = 0.3) -> np.ndarray:
    """1 for every patch at least ``min_cover`` covered by the union of ``boxes``."""
    cover = np.zeros((grid.height, grid.width), dtype=bool)
    for b in boxes:
        x0, y0 = int(np.floor(b.x)), int(np.floor(b.y))
        cover[y0:int(np.ceil(b.y + b.h)), x0:int(np.ceil(b.x + b.w))] = True
    p = grid.patch_size
    frac = cover.reshape(grid.rows, p, grid.cols, p).mean(axis=(1, 3)).reshape(-1)
    return (frac >= min_cover).astype(np.float64)


def train_objectness(store: ParamStore, frames: np.ndarray, boxes: Sequence[Sequence[Box]],
                     grid: PatchGrid, epochs: int = 200, lr: float = 0.05,
                     min_cover: float = 0.3, prefix: str = "obj") -> list[float]:
    """Full-batch BCE training of the objectness head on box-derived patch labels."""
    pixels = patchify(frames, grid).reshape(-1, frames.shape[-1] * grid.patch_size ** 2)
    labels = np.concatenate([box_patch_labels(b, grid, min_cover) for b in boxes])[:, None]
    x = T.Tensor(pixels)
    losses = []
    for _ in range(epochs):
        store.zero_grads()
        loss = T.bce(T.sigmoid(objectness_logits(x, store, prefix)), labels)
        loss.backward()
        adam_step(store, lr=lr)
        losses.append(loss.item())
    return losses


def detect_on_mask(frame: Frame, grid: PatchGrid, mask: PatchMask, store: ParamStore,
                   threshold: float = 0.5, prefix: str = "obj") -> list[Detection]:
    """Detections from 4-connected groups of sensed patches whose objectness >= threshold.

    Each box is the pixel rectangle spanned by its group of patches; confidence
    is the group's mean objectness.  Unsensed patches are never scored.
    """
    grid.check_frame(frame.height, frame.width)
    if mask.grid != grid:
        raise ValueError("mask was built for a different grid")
    idx = mask.indices
    if idx.size == 0:
        return []
    p = grid.patch_size
    pixels = np.stack([frame.data[grid.pixel_slices(int(i))].reshape(-1) for i in idx])
    scores = objectness_scores(pixels, store, prefix)
    score_map = np.zeros(grid.n_patches)
    score_map[idx] = scores
    positive = np.zeros(grid.n_patches, dtype=bool)
    positive[idx] = scores >= threshold
    labelled, n = ndimage.label(positive.reshape(grid.rows, grid.cols))
    dets = []
    for comp in range(1, n + 1):
        rows, cols = np.nonzero(labelled == comp)
        box = Box(float(cols.min() * p), float(rows.min() * p),
                  float((cols.max() - cols.min() + 1) * p), float((rows.max() - rows.min() + 1) * p))
        conf = float(score_map.reshape(grid.rows, grid.cols)[rows, cols].mean())
        dets.append(Detection(box, conf, frame.time_index))
    return dets


# -- association ------------------------------------------------------------------------


def associate(tracks: list[Track], detections: Sequence[Detection], iou_min: float = 0.3,
              max_misses: int = 3) -> list[Track]:
    """Greedy IoU association of one frame of detections onto ``tracks``.

    Pairs are taken in descending IoU (ties: track order, then detection order)
    and never below ``iou_min``.  Unmatched detections open tracks with ids above
    every id seen so far; unmatched active tracks accumulate misses and go
    inactive once they reach ``max_misses``.  ``tracks`` is updated in place and
    returned.
    """
    frames = {d.frame for d in detections}
    if len(frames) > 1:
        raise ValueError(f"detections span several frames: {sorted(frames)}")
    live = [t for t in tracks if t.active]
    pairs = []
    for ti, t in enumerate(live):
        for di, d in enumerate(detections):
            v = iou(t.last_box, d.box)
            if v >= iou_min:
                pairs.append((-v, ti, di))
    pairs.sort()
    used_t, used_d = set(), set()
    for _, ti, di in pairs:
        if ti in used_t or di in used_d:
            continue
        used_t.add(ti)
        used_d.add(di)
        live[ti].extend(detections[di].frame, detections[di].box)
        live[ti].misses = 0
    for ti, t in enumerate(live):
        if ti not in used_t:
            t.misses += 1
            if t.misses >= max_misses:
                t.active = False
    next_id = max((t.track_id for t in tracks), default=0) + 1
    for di, d in enumerate(detections):
        if di not in used_d:
            tracks.append(Track(next_id, [(d.frame, d.box)]))
            next_id += 1
    return tracks


def tracks_to_rows(tracks: Sequence[Track]) -> list[tuple[int, int, Box]]:
    rows = [(f, t.track_id, b) for t in tracks for f, b in t.history]
    return sorted(rows, key=lambda r: (r[0], r[1]))


def write_tracks_csv(path, rows: Sequence[tuple[int, int, Box, float]]) -> None:
    """MOT-style CSV: frame, id, x, y, w, h, confidence."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "id", "x", "y", "w", "h", "confidence"])
        for frame, tid, box, conf in rows:
            w.writerow([frame, tid, repr(box.x), repr(box.y), repr(box.w), repr(box.h), repr(float(conf))])


def read_tracks_csv(path) -> list[tuple[int, int, Box, float]]:
    with Path(path).open(encoding="utf-8") as fh:
        return [(int(r["frame"]), int(r["id"]), Box(float(r["x"]), float(r["y"]), float(r["w"]), float(r["h"])),
                 float(r["confidence"])) for r in csv.DictReader(fh)]


def run_tracker(frames: np.ndarray, masks: Sequence[PatchMask], grid: PatchGrid, store: ParamStore,
                iou_min: float = 0.3, max_misses: int = 3) -> tuple[list[Track], list[tuple[int, int, Box, float]]]:
    """Detect on every masked frame and associate; returns tracks and per-frame output rows."""
    tracks: list[Track] = []
    rows = []
    for t, mask in enumerate(masks):
        dets = detect_on_mask(Frame(frames[t], t), grid, mask, store)
        associate(tracks, dets, iou_min, max_misses)
        conf = {(d.box): d.confidence for d in dets}
        for tr in tracks:
            if tr.history and tr.history[-1][0] == t:
                rows.append((t, tr.track_id, tr.last_box, conf.get(tr.last_box, 0.0)))
    rows.sort(key=lambda r: (r[0], r[1]))
    return tracks, rows
