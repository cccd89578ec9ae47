import numpy as np
import pytest
from hypothesis import given, strategies as st

from saccades.sensor import Frame, PatchGrid, PatchMask
from saccades.tracking import (Box, Detection, Track, associate, box_patch_labels, detect_on_mask,
                               init_objectness, iou, read_tracks_csv, run_tracker, train_objectness,
                               write_tracks_csv)

GRID = PatchGrid(4, 4, 4)


def test_iou_examples():
    a = Box(0, 0, 2, 2)
    assert iou(a, a) == 1.0
    assert iou(a, Box(5, 5, 2, 2)) == 0.0
    assert iou(a, Box(1, 1, 2, 2)) == pytest.approx(1 / 7, abs=1e-15)
    with pytest.raises(ValueError):
        Box(0, 0, 0, 1)


def test_box_clip():
    assert Box(-2, -2, 6, 6).clip(10, 10) == Box(0, 0, 4, 4)


def test_track_frames_strictly_increase():
    t = Track(1, [(0, Box(0, 0, 1, 1))])
    with pytest.raises(ValueError):
        t.extend(0, Box(0, 0, 1, 1))


def test_associate_examples():
    tracks = associate([], [Detection(Box(0, 0, 4, 4), 0.9, 0), Detection(Box(9, 9, 4, 4), 0.8, 0)])
    assert [t.track_id for t in tracks] == [1, 2]
    associate(tracks, [Detection(Box(0, 0, 4, 4), 0.9, 1)])
    assert tracks[0].history[-1] == (1, Box(0, 0, 4, 4)) and len(tracks) == 2
    assert tracks[1].misses == 1
    with pytest.raises(ValueError):
        associate(tracks, [Detection(Box(0, 0, 1, 1), 0.5, 2), Detection(Box(0, 0, 1, 1), 0.5, 3)])


def test_associate_deactivates_after_max_misses():
    tracks = associate([], [Detection(Box(0, 0, 4, 4), 0.9, 0)])
    for f in range(1, 4):
        associate(tracks, [], max_misses=3)
    assert not tracks[0].active
    associate(tracks, [Detection(Box(0, 0, 4, 4), 0.9, 4)])
    assert [t.track_id for t in tracks] == [1, 2]   # ids are never reused


def test_crossing_objects_hand_trace():
    # A moves right, B moves left, 4 px per frame; boxes 10x10
    xs_a, xs_b = [0, 4, 8, 12], [20, 16, 12, 8]
    tracks = []
    for f, (xa, xb) in enumerate(zip(xs_a, xs_b)):
        associate(tracks, [Detection(Box(xa, 0, 10, 10), 0.9, f), Detection(Box(xb, 0, 10, 10), 0.9, f)])
    # frames 1-2: IoU 6/14 with own detection beats 0 / 2/18 across
    # frame 3: track 1 (last x=8) meets B's box at x=8 with IoU 1.0, picked first by the greedy matcher
    assert [b.x for _, b in tracks[0].history] == [0, 4, 8, 8]
    assert [b.x for _, b in tracks[1].history] == [20, 16, 12, 12]
    assert len(tracks) == 2


@given(st.lists(st.builds(Box, st.integers(0, 30), st.integers(0, 30), st.integers(1, 12), st.integers(1, 12)),
                min_size=1, max_size=5),
       st.lists(st.builds(Box, st.integers(0, 30), st.integers(0, 30), st.integers(1, 12), st.integers(1, 12)),
                max_size=5),
       st.floats(0.05, 0.9))
def test_associate_never_matches_below_threshold(first, second, thr):
    tracks = associate([], [Detection(b, 0.5, 0) for b in first])
    last = {t.track_id: t.last_box for t in tracks}
    associate(tracks, [Detection(b, 0.5, 1) for b in second], iou_min=thr)
    for t in tracks:
        if t.track_id in last and len(t.history) == 2:
            assert iou(last[t.track_id], t.history[1][1]) >= thr
    ids = [t.track_id for t in tracks]
    assert len(ids) == len(set(ids))


def _block_frame(r, c):
    data = np.full((16, 16, 1), 0.05)
    data[4 * r:4 * r + 8, 4 * c:4 * c + 8] = 1.0
    return data


@pytest.fixture(scope="module")
def objectness():
    frames, boxes = [], []
    for r in range(3):
        for c in range(3):
            frames.append(_block_frame(r, c))
            boxes.append([Box(4 * c, 4 * r, 8, 8)])
    store = init_objectness(16, 0)
    train_objectness(store, np.stack(frames), boxes, GRID, epochs=300, lr=0.1)
    return store


def test_box_patch_labels():
    labels = box_patch_labels([Box(4, 4, 8, 8)], GRID)
    assert np.flatnonzero(labels).tolist() == [5, 6, 9, 10]
    assert box_patch_labels([Box(0, 0, 1, 4)], GRID).sum() == 0      # 25% < 30%


def test_detect_on_mask_examples(objectness):
    f = Frame(_block_frame(1, 1), 3)
    assert detect_on_mask(f, GRID, GRID.empty_mask(), objectness) == []
    dets = detect_on_mask(f, GRID, GRID.full_mask(), objectness)
    assert len(dets) == 1
    assert dets[0].box == Box(4, 4, 8, 8) and dets[0].frame == 3 and 0.5 <= dets[0].confidence <= 1
    half = detect_on_mask(f, GRID, PatchMask.from_indices(GRID, [5, 9, 0, 15]), objectness)
    assert [d.box for d in half] == [Box(4, 4, 4, 8)]


@given(st.lists(st.booleans(), min_size=16, max_size=16), st.integers(0, 2 ** 16))
def test_detect_on_mask_ignores_unsensed_pixels(objectness, sensed, seed):
    mask = PatchMask(GRID, np.array(sensed))
    data = _block_frame(1, 2)
    noisy = data.copy()
    pix = np.repeat(np.repeat(mask.sensed.reshape(4, 4), 4, 0), 4, 1)
    noisy[~pix] = np.random.default_rng(seed).random((~pix).sum())[:, None]
    a = detect_on_mask(Frame(data), GRID, mask, objectness)
    b = detect_on_mask(Frame(noisy), GRID, mask, objectness)
    assert a == b


def test_tracker_csv_round_trip(tmp_path, objectness):
    frames = np.stack([_block_frame(1, c) for c in (0, 1, 2, 2)])
    tracks, rows = run_tracker(frames, [GRID.full_mask()] * 4, GRID, objectness)
    assert len(tracks) == 1 and [r[0] for r in rows] == [0, 1, 2, 3]
    path = tmp_path / "t.csv"
    write_tracks_csv(path, rows)
    assert path.read_text().splitlines()[0] == "frame,id,x,y,w,h,confidence"
    assert read_tracks_csv(path) == rows
