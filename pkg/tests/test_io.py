import json

import numpy as np
import pytest

from saccades.datagen import SceneConfig, generate_videos
from saccades.io import (DatasetError, emit_report, mask_from_json, mask_to_json, read_dataset, read_pnm,
                         read_report_csv, read_report_json, write_dataset, write_pnm)
from saccades.metrics import MetricReport
from saccades.sensor import PatchGrid, PatchMask


@pytest.mark.parametrize("shape", [(5, 7), (5, 7, 3)])
def test_pnm_round_trip(tmp_path, rng, shape):
    img = rng.integers(0, 256, size=shape).astype(np.uint8)
    write_pnm(tmp_path / "a.pnm", img)
    assert np.array_equal(read_pnm(tmp_path / "a.pnm"), img)


def test_pnm_header_comments_and_errors(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n2 1\n255\n\x01\x02")
    assert read_pnm(p).tolist() == [[1, 2]]
    p.write_bytes(b"P5\n2 1\n65535\n\x00\x01\x00\x02")
    with pytest.raises(DatasetError, match="c.pgm"):
        read_pnm(p)
    p.write_bytes(b"P5\n2 2\n255\n\x01")
    with pytest.raises(DatasetError, match="truncated"):
        read_pnm(p)


def test_mask_json_round_trip():
    grid = PatchGrid(2, 4, 4)
    m = PatchMask.from_indices(grid, [0, 5, 15])
    assert json.loads(mask_to_json(m)) == [0, 5, 15]
    assert mask_from_json(mask_to_json(m), grid) == m


@pytest.fixture
def videos():
    return generate_videos(SceneConfig(n_frames=4, channels=3, clutter=0.3, seed=2), 2)


def test_dataset_round_trip_is_exact(tmp_path, videos):
    write_dataset(tmp_path / "ds", videos)
    back = read_dataset(tmp_path / "ds")
    for a, b in zip(videos, back):
        assert a.name == b.name and a.scene == b.scene
        assert np.array_equal(a.frames, b.frames)
        assert np.array_equal(a.gt.labels, b.gt.labels)
        assert np.array_equal(a.gt.attended, b.gt.attended)
        assert np.array_equal(a.gt.attention, b.gt.attention)
        assert np.array_equal(a.gt.instances, b.gt.instances)
        assert a.gt.objects == b.gt.objects


def test_truncated_gt_names_file(tmp_path, videos):
    root = write_dataset(tmp_path / "ds", videos)
    gt = root / "video_001" / "gt.json"
    gt.write_text(gt.read_text()[:40])
    with pytest.raises(DatasetError, match=r"video_001.gt\.json"):
        read_dataset(root)


def test_missing_mask_names_frame(tmp_path, videos):
    root = write_dataset(tmp_path / "ds", videos)
    (root / "video_000" / "masks" / "mask_000002.pgm").unlink()
    with pytest.raises(DatasetError, match="frame 2"):
        read_dataset(root)


def test_dimension_mismatch(tmp_path, videos):
    root = write_dataset(tmp_path / "ds", videos)
    write_pnm(root / "video_000" / "masks" / "mask_000001.pgm", np.zeros((8, 8), np.uint8))
    with pytest.raises(DatasetError, match="mismatch at frame 1"):
        read_dataset(root)


def test_missing_index(tmp_path):
    with pytest.raises(DatasetError, match="dataset.json"):
        read_dataset(tmp_path)


def test_emit_report_csv_and_json(tmp_path):
    r = MetricReport("acc", [0.1, 0.2, 0.3], [0.5, 0.625, 1 / 3], metadata={"seed": 0})
    lines = emit_report(r, tmp_path / "r.csv").read_text().splitlines()
    assert lines == ["axis,value", "0.1,0.5", "0.2,0.625", f"0.3,{1 / 3!r}"]
    back = read_report_csv(tmp_path / "r.csv")
    assert back.values == r.values and back.axis == r.axis
    emit_report(r, tmp_path / "r.json")
    assert read_report_json(tmp_path / "r.json").to_dict() == r.to_dict()
    with pytest.raises(ValueError):
        emit_report(r, tmp_path / "r.txt")


def test_emit_report_rejects_length_mismatch(tmp_path):
    with pytest.raises(ValueError):
        emit_report(MetricReport("x", [1, 2], [0.5]), tmp_path / "bad.csv")
    assert not (tmp_path / "bad.csv").exists()
