"""Patch selection policies: random, oracle (ground-truth saliency) and top-k over heatmaps."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sensor import PatchGrid, PatchMask

POLICY_NAMES = ("random", "oracle-threshold", "oracle-topk", "learned", "full")


@dataclass(frozen=True)
class Budget:
    """Sensing budget given as a patch count ``k`` or a fraction of the grid."""

    k: int | None = None
    fraction: float | None = None

    def __post_init__(self):
        if (self.k is None) == (self.fraction is None):
            raise ValueError("give exactly one of k or fraction")
        if self.fraction is not None and not 0.0 < self.fraction <= 1.0:
            raise ValueError(f"fraction must lie in (0, 1], got {self.fraction}")
        if self.k is not None and self.k < 1:
            raise ValueError(f"k must be at least 1, got {self.k}")

    def resolve(self, n_patches: int) -> int:
        if self.k is not None:
            k = self.k
        else:
            # nearest count, half rounds up, never below one patch
            k = max(1, math.floor(round(self.fraction * n_patches, 9) + 0.5))
        if k > n_patches:
            raise ValueError(f"budget k={k} exceeds {n_patches} patches")
        return k


def as_budget(value) -> Budget:
    if isinstance(value, Budget):
        return value
    if isinstance(value, int) and not isinstance(value, bool):
        return Budget(k=value)
    return Budget(fraction=float(value))


@dataclass(frozen=True)
class Heatmap:
    grid: PatchGrid
    scores: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if s.size != self.grid.n_patches:
            raise ValueError(f"heatmap has {s.size} scores for {self.grid.n_patches} patches")
        if not np.isfinite(s).all():
            raise ValueError("heatmap scores must be finite")
        object.__setattr__(self, "scores", s)


def topk_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores along the last axis; ties go to the lower index.

    Works on a single score vector or a batch ``(B, N)``; the result is sorted ascending.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.shape[-1]
    if not 0 <= k <= n:
        raise ValueError(f"k={k} outside [0, {n}]")
    order = np.argsort(-scores, axis=-1, kind="stable")
    return np.sort(order[..., :k], axis=-1)


def topk_select(heatmap: Heatmap, budget) -> PatchMask:
    k = as_budget(budget).resolve(heatmap.grid.n_patches)
    return PatchMask.from_indices(heatmap.grid, topk_indices(heatmap.scores, k))


def random_select(n_patches: int, budget, seed, grid: PatchGrid | None = None) -> PatchMask:
    """Exactly ``k`` patches drawn uniformly without replacement.

    ``seed`` may be an int or a ``numpy.random.Generator`` owned by the caller.
    """
    k = as_budget(budget).resolve(n_patches)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx = rng.choice(n_patches, size=k, replace=False)
    if grid is None:
        grid = PatchGrid(1, 1, n_patches)
    elif grid.n_patches != n_patches:
        raise ValueError("grid size does not match n_patches")
    return PatchMask.from_indices(grid, idx)


def salient_fractions(saliency: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """Mean saliency inside every patch, in patch-index order."""
    s = np.asarray(saliency, dtype=np.float64)
    if s.ndim == 3:
        s = s.mean(axis=2)
    grid.check_frame(*s.shape)
    p = grid.patch_size
    return s.reshape(grid.rows, p, grid.cols, p).mean(axis=(1, 3)).reshape(-1)


def oracle_select(saliency: np.ndarray, grid: PatchGrid, mode) -> PatchMask:
    """Select patches from a per-pixel saliency map.

    ``mode`` is either a threshold ``tau`` in [0, 1] (sense patches whose salient
    fraction is at least ``tau``; ``tau == 0`` means any salient pixel at all) or
    a :class:`Budget` (top-k by salient fraction).
    """
    frac = salient_fractions(saliency, grid)
    if isinstance(mode, Budget):
        return topk_select(Heatmap(grid, frac), mode)
    tau = float(mode)
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {tau}")
    sensed = frac > 0 if tau == 0.0 else frac >= tau
    return PatchMask(grid, sensed)
