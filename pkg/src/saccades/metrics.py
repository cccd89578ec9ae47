"""Accuracy curves, AUROC, detection AP/AR and CLEAR-MOT scores."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .tracking import Box, Detection, iou

COCO_THRESHOLDS = tuple(np.round(np.arange(0.5, 0.951, 0.05), 2))


class UndefinedMetricError(ValueError):
    pass


@dataclass
class MetricReport:
    name: str
    axis: list[float]
    values: list[float]
    axis_name: str = "budget"
    stderr: list[float] | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.axis = [float(a) for a in self.axis]
        self.values = [float(v) for v in self.values]
        if len(self.axis) != len(self.values):
            raise ValueError(f"{self.name}: {len(self.axis)} axis points but {len(self.values)} values")
        if self.stderr is not None:
            self.stderr = [float(s) for s in self.stderr]
            if len(self.stderr) != len(self.values):
                raise ValueError(f"{self.name}: stderr length differs from values")
        if not np.isfinite(self.values).all():
            raise ValueError(f"{self.name}: non-finite metric values")

    def to_dict(self) -> dict:
        return {"name": self.name, "axis_name": self.axis_name, "axis": self.axis,
                "values": self.values, "stderr": self.stderr, "metadata": self.metadata}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(name=d["name"], axis=d["axis"], values=d["values"], axis_name=d.get("axis_name", "budget"),
                   stderr=d.get("stderr"), metadata=d.get("metadata", {}))


# -- classification -----------------------------------------------------------------


def accuracy_curve(predict: Callable[[np.ndarray, np.ndarray], np.ndarray], frames: np.ndarray,
                   labels: np.ndarray, masks_for: Callable[[float], np.ndarray],
                   budgets: Sequence[float], name: str = "accuracy",
                   metadata: dict | None = None) -> MetricReport:
    """Top-1 accuracy at each budget.

    ``masks_for(budget)`` returns a ``(B, N)`` sensed mask per frame and
    ``predict(frames, sensed)`` returns predicted labels.
    """
    if len(frames) == 0:
        raise ValueError("empty dataset")
    budgets = [float(b) for b in budgets]
    if budgets != sorted(budgets):
        raise ValueError("budgets must be sorted ascending")
    labels = np.asarray(labels)
    values = [float(np.mean(np.asarray(predict(frames, masks_for(b))) == labels)) for b in budgets]
    return MetricReport(name, budgets, values, metadata=dict(metadata or {}))


# -- heatmap ranking ---------------------------------------------------------------------


def auroc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative (ties count half)."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary")
    pos = int((y == 1).sum())
    neg = y.size - pos
    if pos == 0 or neg == 0:
        raise UndefinedMetricError("AUROC needs at least one positive and one negative label")
    ranks = rankdata(s)  # midranks for ties
    return float((ranks[y == 1].sum() - pos * (pos + 1) / 2.0) / (pos * neg))


# -- detection ------------------------------------------------------------------------------


def _gt_table(gt_boxes) -> dict[tuple[int, int], list[Box]]:
    """Normalise GT to ``{(frame, label): [Box, ...]}``.

    Accepts bare boxes (frame 0, label 0), ``(frame, box)`` or ``(frame, box, label)``.
    """
    table: dict[tuple[int, int], list[Box]] = defaultdict(list)
    for g in gt_boxes:
        if isinstance(g, Box):
            table[(0, 0)].append(g)
        elif len(g) == 2:
            table[(int(g[0]), 0)].append(g[1])
        else:
            table[(int(g[0]), int(g[2]))].append(g[1])
    return table


def _match_flags(dets: Sequence[Detection], gt: Mapping[tuple[int, int], list[Box]],
                 thr: float) -> np.ndarray:
    """True-positive flags for ``dets`` already in descending-confidence order."""
    used = {key: np.zeros(len(v), dtype=bool) for key, v in gt.items()}
    tp = np.zeros(len(dets), dtype=bool)
    for i, d in enumerate(dets):
        key = (d.frame, d.label)
        cands = gt.get(key, [])
        best, best_j = thr, -1
        for j, g in enumerate(cands):
            if used[key][j]:
                continue
            v = iou(d.box, g)
            if v >= best:
                best, best_j = v, j
        if best_j >= 0:
            used[key][best_j] = True
            tp[i] = True
    return tp


def _ranked(dets: Sequence[Detection]) -> list[Detection]:
    return sorted(dets, key=lambda d: -d.confidence)  # stable on ties


def _ap_single_class(dets, gt, thr) -> float:
    n_gt = sum(len(v) for v in gt.values())
    if n_gt == 0:
        return 1.0 if not dets else 0.0
    if not dets:
        return 0.0
    tp = _match_flags(_ranked(dets), gt, thr)
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(tp) + 1)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    step = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[step + 1] - mrec[step]) * mpre[step + 1]))


def _by_class(detections, gt_boxes):
    gt = _gt_table(gt_boxes)
    classes = sorted({k[1] for k in gt} | {d.label for d in detections})
    for c in classes or [0]:
        yield ([d for d in detections if d.label == c],
               {k: v for k, v in gt.items() if k[1] == c})


def average_precision(detections: Sequence[Detection], gt_boxes, iou_threshold: float = 0.5) -> float:
    """All-points interpolated AP with greedy confidence-ordered matching, averaged over classes."""
    aps = [_ap_single_class(d, g, iou_threshold) for d, g in _by_class(detections, gt_boxes)]
    return float(np.mean(aps))


def mean_ap(detections, gt_boxes, thresholds=COCO_THRESHOLDS) -> float:
    return float(np.mean([average_precision(detections, gt_boxes, t) for t in thresholds]))


def average_recall(detections: Sequence[Detection], gt_boxes, iou_threshold: float = 0.5,
                   max_detections: int = 100) -> float:
    """Recall using at most ``max_detections`` top-confidence detections per frame."""
    recalls = []
    for dets, gt in _by_class(detections, gt_boxes):
        n_gt = sum(len(v) for v in gt.values())
        if n_gt == 0:
            continue
        per_frame: dict[int, list[Detection]] = defaultdict(list)
        for d in _ranked(dets):
            if len(per_frame[d.frame]) < max_detections:
                per_frame[d.frame].append(d)
        kept = _ranked([d for v in per_frame.values() for d in v])
        recalls.append(_match_flags(kept, gt, iou_threshold).sum() / n_gt)
    return float(np.mean(recalls)) if recalls else 1.0


def mean_ar(detections, gt_boxes, max_detections: int = 100, thresholds=COCO_THRESHOLDS) -> float:
    return float(np.mean([average_recall(detections, gt_boxes, t, max_detections) for t in thresholds]))


# -- tracking ----------------------------------------------------------------------------------


@dataclass
class MotTally:
    misses: int = 0
    false_positives: int = 0
    id_switches: int = 0
    matches: int = 0
    total_gt: int = 0
    sum_distance: float = 0.0

    def __add__(self, other: "MotTally") -> "MotTally":
        return MotTally(*(a + b for a, b in zip(self.as_tuple(), other.as_tuple())))

    def as_tuple(self):
        return (self.misses, self.false_positives, self.id_switches, self.matches,
                self.total_gt, self.sum_distance)

    @property
    def mota(self) -> float:
        if self.total_gt == 0:
            raise UndefinedMetricError("MOTA is undefined without ground-truth objects")
        return 1.0 - (self.misses + self.false_positives + self.id_switches) / self.total_gt

    @property
    def motp(self) -> float:
        """Mean 1 - IoU over matches (lower is better); 1.0 when nothing matched."""
        return self.sum_distance / self.matches if self.matches else 1.0


def _per_frame(rows, what: str) -> dict[int, dict]:
    out: dict[int, dict] = defaultdict(dict)
    for row in rows:
        f, tid, box = row[0], row[1], row[2]
        if tid in out[f]:
            raise ValueError(f"{what}: id {tid} appears twice in frame {f}")
        out[f][tid] = box
    return out


def clear_mot(gt_tracks, hyp_tracks, iou_min: float = 0.5) -> tuple[float, float, MotTally]:
    """CLEAR-MOT over rows ``(frame, id, Box[, ...])``; returns (MOTA, MOTP, tally).

    Correspondences from the previous frame are kept while their IoU stays at or
    above ``iou_min``; the rest are matched greedily by descending IoU.  A switch
    is counted when a GT object is matched to a different hypothesis than the
    last one it was matched to.
    """
    gt = _per_frame(gt_tracks, "ground truth")
    hyp = _per_frame(hyp_tracks, "hypotheses")
    tally = MotTally()
    previous: dict = {}
    last_seen: dict = {}
    for f in sorted(set(gt) | set(hyp)):
        g, h = gt.get(f, {}), hyp.get(f, {})
        matches: dict = {}
        for gid, hid in previous.items():
            if gid in g and hid in h and iou(g[gid], h[hid]) >= iou_min:
                matches[gid] = hid
        taken = set(matches.values())
        pairs = sorted(
            (-iou(g[gid], h[hid]), gid, hid)
            for gid in g if gid not in matches
            for hid in h if hid not in taken and iou(g[gid], h[hid]) >= iou_min
        )
        for _, gid, hid in pairs:
            if gid in matches or hid in taken:
                continue
            matches[gid] = hid
            taken.add(hid)
        for gid, hid in matches.items():
            if gid in last_seen and last_seen[gid] != hid:
                tally.id_switches += 1
            last_seen[gid] = hid
            tally.sum_distance += 1.0 - iou(g[gid], h[hid])
        tally.matches += len(matches)
        tally.misses += len(g) - len(matches)
        tally.false_positives += len(h) - len(matches)
        tally.total_gt += len(g)
        previous = matches
    return tally.mota, tally.motp, tally
