"""Patch-addressable sensor model: frames, patch grids, sensed-set masks and readout cost."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np


class ConfigError(ValueError):
    """A configuration value is invalid (e.g. frame not divisible by patch size)."""


@dataclass(frozen=True, eq=False)
class Frame:
    """One sensor frame, ``data`` shaped ``(height, width, channels)`` with values in [0, 1]."""

    data: np.ndarray
    time_index: int = 0

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim == 2:
            d = d[:, :, None]
        if d.ndim != 3 or d.shape[2] not in (1, 3):
            raise ValueError(f"frame data must be (H, W, 1|3), got {d.shape}")
        if not np.isfinite(d).all() or d.min(initial=0.0) < 0.0 or d.max(initial=0.0) > 1.0:
            raise ValueError("frame values must lie in [0, 1]")
        if self.time_index < 0:
            raise ValueError("time_index must be non-negative")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class PatchGrid:
    patch_size: int
    rows: int
    cols: int

    @property
    def height(self) -> int:
        return self.rows * self.patch_size

    @property
    def width(self) -> int:
        return self.cols * self.patch_size

    @property
    def n_patches(self) -> int:
        return self.rows * self.cols

    def cell(self, i: int) -> tuple[int, int]:
        if not 0 <= i < self.n_patches:
            raise IndexError(f"patch index {i} outside [0, {self.n_patches})")
        return divmod(i, self.cols)

    def pixel_slices(self, i: int) -> tuple[slice, slice]:
        r, c = self.cell(i)
        p = self.patch_size
        return slice(r * p, (r + 1) * p), slice(c * p, (c + 1) * p)

    def check_frame(self, height: int, width: int) -> None:
        if (height, width) != (self.height, self.width):
            raise ValueError(f"grid built for {self.height}x{self.width}, frame is {height}x{width}")

    def full_mask(self) -> "PatchMask":
        return PatchMask(self, np.ones(self.n_patches, dtype=bool))

    def empty_mask(self) -> "PatchMask":
        return PatchMask(self, np.zeros(self.n_patches, dtype=bool))


@dataclass(frozen=True)
class PatchMask:
    grid: PatchGrid
    sensed: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sensed, dtype=bool).reshape(-1)
        if s.size != self.grid.n_patches:
            raise ValueError(f"mask has {s.size} entries for a {self.grid.n_patches}-patch grid")
        s.setflags(write=False)
        object.__setattr__(self, "sensed", s)

    @classmethod
    def from_indices(cls, grid: PatchGrid, indices: Iterable[int]) -> "PatchMask":
        s = np.zeros(grid.n_patches, dtype=bool)
        idx = np.asarray(list(indices), dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= grid.n_patches):
            raise IndexError("mask index outside grid")
        s[idx] = True
        return cls(grid, s)

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.sensed)

    @property
    def count(self) -> int:
        return int(self.sensed.sum())

    def __eq__(self, other) -> bool:
        return (isinstance(other, PatchMask) and self.grid == other.grid
                and bool(np.array_equal(self.sensed, other.sensed)))

    def __hash__(self):
        return hash((self.grid, self.sensed.tobytes()))


@dataclass(frozen=True)
class CostModel:
    """Linear readout energy: joules per pixel read out and per ADC conversion."""

    e_read: float = 1.0
    e_adc: float = 1.0

    def __post_init__(self):
        if self.e_read < 0 or self.e_adc < 0:
            raise ValueError("energy costs must be non-negative")


@dataclass(frozen=True)
class BandwidthReport:
    pixels_read: int
    adc_conversions: int
    fraction_sensed: float
    energy_estimate: float
    pixels_total: int = 0

    def to_dict(self) -> dict:
        return {
            "pixels_read": self.pixels_read,
            "adc_conversions": self.adc_conversions,
            "fraction_sensed": self.fraction_sensed,
            "energy_estimate": self.energy_estimate,
            "pixels_total": self.pixels_total,
        }


@dataclass
class Tokens:
    """Sensed patches as parallel arrays; iterating yields ``(patch_index, pixels)``."""

    indices: np.ndarray
    pixels: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self) -> Iterator[tuple[int, np.ndarray]]:
        for i, px in zip(self.indices, self.pixels):
            yield int(i), px


def partition(frame: Frame, patch_size: int) -> PatchGrid:
    if patch_size <= 0:
        raise ConfigError("patch size must be positive")
    if frame.height % patch_size or frame.width % patch_size:
        raise ConfigError(
            f"patch size {patch_size} does not divide frame {frame.height}x{frame.width}")
    return PatchGrid(patch_size, frame.height // patch_size, frame.width // patch_size)


def _check(frame: Frame, grid: PatchGrid, mask: PatchMask | None) -> None:
    grid.check_frame(frame.height, frame.width)
    if mask is not None and mask.grid != grid:
        raise ValueError("mask was built for a different grid")


def extract_tokens(frame: Frame, grid: PatchGrid, mask: PatchMask) -> Tokens:
    """Pixel vectors of the sensed patches in ascending index order.

    Each vector is the patch flattened row-major over (row, col, channel).
    Only sensed patch rectangles are sliced out of the frame.
    """
    _check(frame, grid, mask)
    idx = mask.indices
    dim = grid.patch_size ** 2 * frame.channels
    pixels = np.empty((len(idx), dim))
    for j, i in enumerate(idx):
        rs, cs = grid.pixel_slices(int(i))
        pixels[j] = frame.data[rs, cs, :].reshape(-1)
    return Tokens(idx, pixels)


def assemble(tokens: Tokens, grid: PatchGrid, channels: int) -> np.ndarray:
    """Inverse of :func:`extract_tokens`; unsensed patches come back as zeros."""
    out = np.zeros((grid.height, grid.width, channels))
    p = grid.patch_size
    for i, px in tokens:
        rs, cs = grid.pixel_slices(i)
        out[rs, cs, :] = px.reshape(p, p, channels)
    return out


def patchify(frames: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """``(B, H, W, C)`` frames to ``(B, N, P*P*C)`` patch vectors (same layout as tokens)."""
    b, h, w, c = frames.shape
    grid.check_frame(h, w)
    p = grid.patch_size
    x = frames.reshape(b, grid.rows, p, grid.cols, p, c).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, grid.n_patches, p * p * c)


def pixel_mask(mask: PatchMask) -> np.ndarray:
    """Boolean ``(H, W)`` image of the sensed pixels."""
    g = mask.grid
    cells = mask.sensed.reshape(g.rows, g.cols)
    return np.kron(cells, np.ones((g.patch_size, g.patch_size), dtype=bool)).astype(bool)


def zero_fill(frame: Frame, grid: PatchGrid, mask: PatchMask) -> Frame:
    _check(frame, grid, mask)
    out = np.where(pixel_mask(mask)[:, :, None], frame.data, 0.0)
    return Frame(out, frame.time_index)


def readout_cost(mask: PatchMask, grid: PatchGrid, channels: int,
                 cost_model: CostModel | None = None) -> BandwidthReport:
    """Pixels read, ADC conversions and energy for sensing only the masked patches."""
    if mask.grid != grid:
        raise ValueError("mask was built for a different grid")
    cost_model = cost_model or CostModel()
    per_patch = grid.patch_size ** 2 * channels
    read = mask.count * per_patch
    return BandwidthReport(
        pixels_read=read,
        adc_conversions=read,
        fraction_sensed=mask.count / grid.n_patches,
        energy_estimate=read * cost_model.e_read + read * cost_model.e_adc,
        pixels_total=grid.n_patches * per_patch,
    )
