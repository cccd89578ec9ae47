"""Deterministic synthetic videos of moving shapes with attention ground truth.

Every object is one of four shape classes (disc, square, triangle, cross)
moving at constant velocity and bouncing off the frame border.  Exactly one
object is attended per frame; attention jumps to a different object every
``shift_interval`` frames.  The attended object is drawn at full intensity and
the rest at ``distractor_intensity``, which gives a visual saliency cue.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .sensor import ConfigError, Frame
from .tracking import Box

SHAPES = ("disc", "square", "triangle", "cross")
N_CLASSES = len(SHAPES)


@dataclass(frozen=True)
class SceneConfig:
    width: int = 32
    height: int = 32
    channels: int = 1
    patch_size: int = 8
    n_frames: int = 20
    n_objects: tuple[int, int] = (1, 3)
    object_radius: tuple[float, float] = (4.5, 6.0)
    speed: tuple[float, float] = (0.5, 1.5)
    shift_interval: int = 5
    clutter: float = 0.0
    distractor_intensity: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("n_objects", "object_radius", "speed"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.width <= 0 or self.height <= 0:
            raise ConfigError("frame dimensions must be positive")
        if self.width % self.patch_size or self.height % self.patch_size:
            raise ConfigError(
                f"frame {self.height}x{self.width} is not divisible by patch size {self.patch_size}")
        if self.channels not in (1, 3):
            raise ConfigError("channels must be 1 or 3")
        if self.shift_interval < 2:
            raise ConfigError("shift_interval must be at least 2")
        if self.n_frames < 1:
            raise ConfigError("n_frames must be at least 1")
        lo, hi = self.n_objects
        if not 1 <= lo <= hi:
            raise ConfigError("n_objects must be a range (lo, hi) with 1 <= lo <= hi")
        if not 0 < self.object_radius[0] <= self.object_radius[1]:
            raise ConfigError("object_radius must be a positive range")
        if not 0 <= self.speed[0] <= self.speed[1]:
            raise ConfigError("speed must be a non-negative range")
        if not 0.0 <= self.clutter <= 1.0:
            raise ConfigError("clutter must lie in [0, 1]")
        if not 0.0 <= self.distractor_intensity <= 1.0:
            raise ConfigError("distractor_intensity must lie in [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("n_objects", "object_radius", "speed"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        return cls(**d)


@dataclass(frozen=True)
class ObjectState:
    track_id: int
    cls: int
    box: Box


@dataclass
class GroundTruth:
    labels: np.ndarray        # (F,) class of the attended object
    attended: np.ndarray      # (F,) track id of the attended object
    attention: np.ndarray     # (F, H, W) bool silhouette of the attended object
    instances: np.ndarray     # (F, H, W) visible track id per pixel, 0 = background
    objects: list[list[ObjectState]] = field(default_factory=list)

    def foreground(self) -> np.ndarray:
        return self.instances > 0


@dataclass
class Video:
    frames: np.ndarray        # (F, H, W, C)
    gt: GroundTruth | None
    scene: SceneConfig | None = None
    name: str = "video"

    def __len__(self) -> int:
        return self.frames.shape[0]

    def frame(self, t: int) -> Frame:
        return Frame(self.frames[t], t)

    def without_gt(self) -> "Video":
        return Video(self.frames, None, self.scene, self.name)


def shape_mask(cls: int, cx: float, cy: float, r: float, height: int, width: int) -> np.ndarray:
    ys, xs = np.mgrid[0:height, 0:width]
    dx = xs + 0.5 - cx
    dy = ys + 0.5 - cy
    if cls == 0:
        m = dx * dx + dy * dy <= r * r
    elif cls == 1:
        m = np.maximum(np.abs(dx), np.abs(dy)) <= 0.8 * r
    elif cls == 2:
        m = (dy >= -r) & (dy <= 0.7 * r) & (np.abs(dx) <= (dy + r) / 1.7)
    elif cls == 3:
        arm = r / 3.0
        inside = (np.abs(dx) <= r) & (np.abs(dy) <= r)
        m = inside & ((np.abs(dx) <= arm) | (np.abs(dy) <= arm))
    else:
        raise ValueError(f"unknown shape class {cls}")
    return m


def _bbox(mask: np.ndarray) -> Box:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return Box(float(cols[0]), float(rows[0]), float(cols[-1] - cols[0] + 1), float(rows[-1] - rows[0] + 1))


def _place(rng, radii, cfg: SceneConfig, restarts: int = 200, tries: int = 50) -> np.ndarray:
    """Non-overlapping start positions; whole layouts are redrawn when one gets stuck."""
    for r in radii:
        if 2 * r + 2 > min(cfg.width, cfg.height):
            raise ConfigError(f"object radius {r:.1f} does not fit a {cfg.height}x{cfg.width} frame")
    for _ in range(restarts):
        centers = []
        for r in radii:
            for _ in range(tries):
                c = np.array([rng.uniform(r + 1, cfg.width - r - 1), rng.uniform(r + 1, cfg.height - r - 1)])
                if all(np.hypot(*(c - o)) >= r + ro + 1 for o, ro in zip(centers, radii)):
                    centers.append(c)
                    break
            else:
                break
        if len(centers) == len(radii):
            return np.array(centers)
    raise ConfigError(
        f"cannot place {len(radii)} objects without overlap in a {cfg.height}x{cfg.width} frame")


def generate_video(config: SceneConfig, name: str = "video") -> Video:
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    n = int(rng.integers(cfg.n_objects[0], cfg.n_objects[1] + 1))
    classes = rng.integers(0, N_CLASSES, size=n)
    radii = rng.uniform(*cfg.object_radius, size=n)
    centers = _place(rng, radii, cfg)
    speed = rng.uniform(*cfg.speed, size=n)
    angle = rng.uniform(0, 2 * np.pi, size=n)
    vel = np.stack([speed * np.cos(angle), speed * np.sin(angle)], axis=1)

    attended = np.empty(cfg.n_frames, dtype=np.int64)
    current = int(rng.integers(n))
    for t in range(cfg.n_frames):
        if t > 0 and t % cfg.shift_interval == 0 and n > 1:
            others = [i for i in range(n) if i != current]
            current = int(others[rng.integers(len(others))])
        attended[t] = current

    h, w, c = cfg.height, cfg.width, cfg.channels
    frames = np.empty((cfg.n_frames, h, w, c))
    instances = np.zeros((cfg.n_frames, h, w), dtype=np.int64)
    objects: list[list[ObjectState]] = []
    for t in range(cfg.n_frames):
        img = np.zeros((h, w, c))
        if cfg.clutter > 0:
            img += rng.uniform(0.0, 0.5 * cfg.clutter, size=(h, w, c))
        per_frame = []
        for i in range(n):
            m = shape_mask(int(classes[i]), centers[i, 0], centers[i, 1], radii[i], h, w)
            level = 1.0 if i == attended[t] else cfg.distractor_intensity
            img[m] = level
            instances[t][m] = i + 1
            per_frame.append(ObjectState(i + 1, int(classes[i]), _bbox(m)))
        frames[t] = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
        objects.append(per_frame)
        # constant velocity with reflection at the borders
        centers += vel
        for i in range(n):
            for axis, limit in ((0, w), (1, h)):
                lo, hi = radii[i] + 1, limit - radii[i] - 1
                if centers[i, axis] < lo:
                    centers[i, axis] = 2 * lo - centers[i, axis]
                    vel[i, axis] = -vel[i, axis]
                elif centers[i, axis] > hi:
                    centers[i, axis] = 2 * hi - centers[i, axis]
                    vel[i, axis] = -vel[i, axis]

    attention = instances == (attended + 1)[:, None, None]
    gt = GroundTruth(
        labels=classes[attended].astype(np.int64),
        attended=attended + 1,
        attention=attention,
        instances=instances,
        objects=objects,
    )
    return Video(frames, gt, cfg, name)


def video_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def generate_videos(config: SceneConfig, n_videos: int, start: int = 0) -> list[Video]:
    """``n_videos`` videos with per-video seeds derived from ``config.seed``."""
    return [
        generate_video(replace(config, seed=video_seed(config.seed, i)), name=f"video_{i:03d}")
        for i in range(start, start + n_videos)
    ]
