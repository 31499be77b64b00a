import os

import numpy as np
import pytest

from segmap.geometry import Intrinsics, Pose
from segmap.sequence_io import (SequenceReader, read_color_png, read_depth_png,
                                read_intrinsics, read_label_png, read_poses,
                                write_color_png, write_depth_png, write_intrinsics,
                                write_label16_png, write_label_png, write_poses)


def test_depth_png_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    depth = rng.uniform(0.3, 5.0, (24, 32)).astype(np.float32)
    depth[0, 0] = 0.0
    path = str(tmp_path / "d.png")
    write_depth_png(path, depth)
    loaded = read_depth_png(path)
    assert loaded.dtype == np.float32
    assert loaded[0, 0] == 0.0
    assert np.abs(loaded - depth).max() <= 0.0005 + 1e-9  # half-millimeter quantization


def test_color_png_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    rgb = rng.integers(0, 256, (24, 32, 3), dtype=np.uint8)
    path = str(tmp_path / "c.png")
    write_color_png(path, rgb)
    assert np.array_equal(read_color_png(path), rgb)


def test_label_pngs_roundtrip(tmp_path):
    labels = np.arange(12, dtype=np.int64).reshape(3, 4) % 7
    p8 = str(tmp_path / "l8.png")
    write_label_png(p8, labels)
    assert np.array_equal(read_label_png(p8), labels)
    import cv2
    p16 = str(tmp_path / "l16.png")
    seg = labels.copy()
    seg[0, 0] = -1
    write_label16_png(p16, seg)
    raw = cv2.imread(p16, cv2.IMREAD_UNCHANGED)
    assert raw.dtype == np.uint16
    assert raw[0, 0] == 65535


def test_intrinsics_roundtrip(tmp_path):
    intr = Intrinsics(520.5, 521.25, 319.5, 239.5, 640, 480)
    path = str(tmp_path / "intrinsics.txt")
    write_intrinsics(path, intr)
    loaded = read_intrinsics(path)
    assert loaded == intr


def test_poses_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    poses = []
    for _ in range(3):
        q = rng.standard_normal(4)
        q /= np.linalg.norm(q)
        w, x, y, z = q
        R = np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])
        poses.append(Pose(R, rng.standard_normal(3)))
    path = str(tmp_path / "poses.txt")
    write_poses(path, poses)
    loaded = read_poses(path)
    for a, b in zip(poses, loaded):
        assert np.allclose(a.rotation, b.rotation, atol=1e-15)
        assert np.allclose(a.translation, b.translation, atol=1e-15)


def test_reader_missing_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        SequenceReader(str(tmp_path))


def test_reader_rejects_more_frames_than_poses(tmp_path, small_seq_dir):
    import shutil
    out = str(tmp_path / "broken")
    shutil.copytree(small_seq_dir, out)
    poses = open(os.path.join(out, "poses.txt")).read().strip().split("\n")
    open(os.path.join(out, "poses.txt"), "w").write("\n".join(poses[:2]) + "\n")
    with pytest.raises(ValueError, match="poses"):
        SequenceReader(out)
