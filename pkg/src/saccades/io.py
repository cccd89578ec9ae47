"""Dataset directories, binary pixmaps, mask JSON and metric report files.

Dataset layout::

    <root>/dataset.json                 {"format_version": 1, "videos": [names]}
    <root>/<video>/gt.json              scene config, labels, boxes, track ids
    <root>/<video>/frame_000123.ppm     P5 (gray) or P6 (RGB), maxval 255
    <root>/<video>/masks/mask_000123.pgm      attention mask, 0 or 255
    <root>/<video>/instances/inst_000123.pgm  visible track id per pixel, 0 = background
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .datagen import GroundTruth, ObjectState, SceneConfig, Video
from .metrics import MetricReport
from .sensor import BandwidthReport, PatchGrid, PatchMask
from .tracking import Box

DATASET_VERSION = 1


class DatasetError(ValueError):
    pass


# -- pixmaps -------------------------------------------------------------------------


def write_pnm(path, image: np.ndarray) -> None:
    """Write uint8 ``(H, W)``/``(H, W, 1)`` as P5 or ``(H, W, 3)`` as P6."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        raise TypeError("pixmaps are written from uint8 arrays")
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    magic = b"P5" if img.ndim == 2 else b"P6"
    h, w = img.shape[:2]
    with Path(path).open("wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(img).tobytes())


def _tokens(raw: bytes, count: int) -> tuple[list[bytes], int]:
    out, pos = [], 0
    while len(out) < count:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DatasetError("truncated pixmap header")
        out.append(raw[start:pos])
    return out, pos + 1


def read_pnm(path) -> np.ndarray:
    """Read a P5/P6 file with maxval 255; returns uint8 ``(H, W)`` or ``(H, W, 3)``."""
    path = Path(path)
    raw = path.read_bytes()
    try:
        (magic, w, h, maxval), start = _tokens(raw, 4)
        w, h, maxval = int(w), int(h), int(maxval)
    except (ValueError, IndexError) as exc:
        raise DatasetError(f"{path}: malformed pixmap header") from exc
    if magic not in (b"P5", b"P6") or maxval != 255:
        raise DatasetError(f"{path}: only P5/P6 with maxval 255 are supported")
    ch = 1 if magic == b"P5" else 3
    n = w * h * ch
    data = raw[start:start + n]
    if len(data) != n:
        raise DatasetError(f"{path}: pixel data truncated")
    arr = np.frombuffer(data, dtype=np.uint8)
    return arr.reshape(h, w) if ch == 1 else arr.reshape(h, w, 3)


def frame_to_u8(frame: np.ndarray) -> np.ndarray:
    return np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)


def u8_to_frame(img: np.ndarray) -> np.ndarray:
    f = img.astype(np.float64) / 255.0
    return f[:, :, None] if f.ndim == 2 else f


# -- masks and bandwidth records ---------------------------------------------------------


def mask_to_json(mask: PatchMask) -> str:
    return json.dumps([int(i) for i in mask.indices])


def mask_from_json(text: str, grid: PatchGrid) -> PatchMask:
    return PatchMask.from_indices(grid, json.loads(text))


def bandwidth_to_json(report: BandwidthReport) -> str:
    return json.dumps(report.to_dict(), sort_keys=True)


# -- datasets ---------------------------------------------------------------------------


def _gt_json(video: Video) -> dict:
    gt = video.gt
    frames = []
    for t in range(len(video)):
        frames.append({
            "index": t,
            "label": int(gt.labels[t]),
            "attended": int(gt.attended[t]),
            "objects": [{"id": o.track_id, "class": o.cls, "box": o.box.as_list()} for o in gt.objects[t]],
        })
    return {
        "format_version": DATASET_VERSION,
        "name": video.name,
        "n_frames": len(video),
        "height": video.frames.shape[1],
        "width": video.frames.shape[2],
        "channels": video.frames.shape[3],
        "scene": None if video.scene is None else video.scene.to_dict(),
        "frames": frames,
    }


def write_video(root, video: Video) -> Path:
    if video.gt is None:
        raise DatasetError(f"{video.name}: cannot write a video without ground truth")
    vdir = Path(root) / video.name
    (vdir / "masks").mkdir(parents=True, exist_ok=True)
    (vdir / "instances").mkdir(exist_ok=True)
    if video.gt.instances.max(initial=0) > 255:
        raise DatasetError(f"{video.name}: more than 255 objects cannot be stored in 8-bit instance maps")
    for t in range(len(video)):
        write_pnm(vdir / f"frame_{t:06d}.ppm", frame_to_u8(video.frames[t]))
        write_pnm(vdir / "masks" / f"mask_{t:06d}.pgm", video.gt.attention[t].astype(np.uint8) * 255)
        write_pnm(vdir / "instances" / f"inst_{t:06d}.pgm", video.gt.instances[t].astype(np.uint8))
    with (vdir / "gt.json").open("w", encoding="utf-8") as fh:
        json.dump(_gt_json(video), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return vdir


def write_dataset(path, videos: Sequence[Video]) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    names = [v.name for v in videos]
    if len(set(names)) != len(names):
        raise DatasetError("video names must be unique")
    for v in videos:
        write_video(root, v)
    with (root / "dataset.json").open("w", encoding="utf-8") as fh:
        json.dump({"format_version": DATASET_VERSION, "videos": names}, fh, indent=1)
        fh.write("\n")
    return root


def _load_json(path: Path) -> dict:
    if not path.exists():
        raise DatasetError(f"missing file {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: malformed JSON ({exc.msg} at line {exc.lineno})") from exc


def read_video(vdir) -> Video:
    vdir = Path(vdir)
    meta = _load_json(vdir / "gt.json")
    try:
        n, h, w, c = meta["n_frames"], meta["height"], meta["width"], meta["channels"]
        frame_meta = meta["frames"]
    except KeyError as exc:
        raise DatasetError(f"{vdir / 'gt.json'}: missing key {exc}") from exc
    frames = np.empty((n, h, w, c))
    attention = np.zeros((n, h, w), dtype=bool)
    instances = np.zeros((n, h, w), dtype=np.int64)
    for t in range(n):
        fpath = vdir / f"frame_{t:06d}.ppm"
        mpath = vdir / "masks" / f"mask_{t:06d}.pgm"
        ipath = vdir / "instances" / f"inst_{t:06d}.pgm"
        for p, what in ((fpath, "frame"), (mpath, "mask"), (ipath, "instance map")):
            if not p.exists():
                raise DatasetError(f"{vdir.name}: missing {what} for frame {t} ({p.name})")
        img = u8_to_frame(read_pnm(fpath))
        if img.shape != (h, w, c):
            raise DatasetError(f"{fpath}: shape {img.shape} differs from gt.json ({h}, {w}, {c})")
        frames[t] = img
        m = read_pnm(mpath)
        inst = read_pnm(ipath)
        if m.shape != (h, w) or inst.shape != (h, w):
            raise DatasetError(f"{vdir.name}: mask/frame dimension mismatch at frame {t}")
        attention[t] = m > 0
        instances[t] = inst
    gt = GroundTruth(
        labels=np.array([f["label"] for f in frame_meta], dtype=np.int64),
        attended=np.array([f["attended"] for f in frame_meta], dtype=np.int64),
        attention=attention,
        instances=instances,
        objects=[[ObjectState(o["id"], o["class"], Box(*o["box"])) for o in f["objects"]] for f in frame_meta],
    )
    scene = None if meta.get("scene") is None else SceneConfig.from_dict(meta["scene"])
    return Video(frames, gt, scene, meta.get("name", vdir.name))


def read_dataset(path) -> list[Video]:
    root = Path(path)
    index = _load_json(root / "dataset.json")
    return [read_video(root / name) for name in index["videos"]]


# -- metric reports -------------------------------------------------------------------------


def emit_report(report: MetricReport, path, fmt: str | None = None) -> Path:
    """Write a report as CSV (axis, value[, stderr]) or JSON; format defaults to the suffix."""
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".")
    MetricReport.from_dict(report.to_dict())  # re-validates lengths before touching disk
    if fmt == "csv":
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            has_err = report.stderr is not None
            w.writerow(["axis", "value", "stderr"] if has_err else ["axis", "value"])
            for i, (a, v) in enumerate(zip(report.axis, report.values)):
                w.writerow([repr(a), repr(v)] + ([repr(report.stderr[i])] if has_err else []))
    elif fmt == "json":
        with path.open("w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path


def read_report_json(path) -> MetricReport:
    return MetricReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def read_report_csv(path, name: str = "") -> MetricReport:
    with Path(path).open(encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    stderr = [float(r["stderr"]) for r in rows] if rows and "stderr" in rows[0] else None
    return MetricReport(name, [float(r["axis"]) for r in rows], [float(r["value"]) for r in rows], stderr=stderr)
