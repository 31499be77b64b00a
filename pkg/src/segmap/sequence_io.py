"""Sequence directory reader/writer.

Layout:
    color/%06d.png      8-bit RGB
    depth/%06d.png      16-bit grayscale, millimeters
    intrinsics.txt      "fx fy cx cy width height"
    poses.txt           one row-major 3x4 camera-to-world matrix per line
    features/%06d.featpack   optional deep-feature packets
    labels/%06d.png     optional 8-bit ground-truth class ids
"""

from __future__ import annotations

import os

import cv2
import numpy as np

from .geometry import Frame, Intrinsics, Pose, make_frame

DEPTH_SCALE_MM = 1000.0


def read_color_png(path: str) -> np.ndarray:
    img = cv2.imread(path, cv2.IMREAD_COLOR)
    if img is None:
        raise FileNotFoundError(f"cannot read color image {path}")
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def write_color_png(path: str, rgb: np.ndarray):
    cv2.imwrite(path, cv2.cvtColor(rgb, cv2.COLOR_RGB2BGR))


def read_depth_png(path: str) -> np.ndarray:
    """16-bit millimeter PNG -> float32 meters (0 stays 0 = missing)."""
    img = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if img is None:
        raise FileNotFoundError(f"cannot read depth image {path}")
    if img.dtype != np.uint16:
        raise ValueError(f"depth image {path} is not 16-bit")
    return img.astype(np.float32) / DEPTH_SCALE_MM


def write_depth_png(path: str, depth_m: np.ndarray):
    mm = np.round(np.asarray(depth_m, dtype=np.float64) * DEPTH_SCALE_MM)
    cv2.imwrite(path, np.clip(mm, 0, 65535).astype(np.uint16))


def read_label_png(path: str) -> np.ndarray:
    img = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if img is None:
        raise FileNotFoundError(f"cannot read label image {path}")
    if img.ndim == 3:
        img = img[..., 0]
    return img.astype(np.int32)


def write_label_png(path: str, labels: np.ndarray):
    cv2.imwrite(path, np.asarray(labels).astype(np.uint8))


def write_label16_png(path: str, labels: np.ndarray):
    """Debug export of per-frame 2D segment ids as 16-bit PNG (-1 -> 65535)."""
    arr = np.asarray(labels, dtype=np.int64).copy()
    arr[arr < 0] = 65535
    cv2.imwrite(path, arr.astype(np.uint16))


def read_intrinsics(path: str) -> Intrinsics:
    vals = np.loadtxt(path).reshape(-1)
    if vals.size != 6:
        raise ValueError(f"intrinsics file {path} must hold 'fx fy cx cy width height'")
    fx, fy, cx, cy, w, h = vals
    return Intrinsics(float(fx), float(fy), float(cx), float(cy), int(round(w)), int(round(h)))


def write_intrinsics(path: str, intr: Intrinsics):
    with open(path, "w") as f:
        f.write(f"{intr.fx} {intr.fy} {intr.cx} {intr.cy} {intr.width} {intr.height}\n")


def read_poses(path: str) -> list[Pose]:
    rows = np.loadtxt(path)
    rows = np.atleast_2d(rows)
    if rows.shape[1] != 12:
        raise ValueError(f"poses file {path} must hold one row-major 3x4 matrix per line")
    poses = []
    for row in rows:
        m = row.reshape(3, 4)
        poses.append(Pose(m[:, :3], m[:, 3]))
    return poses


def write_poses(path: str, poses: list[Pose]):
    with open(path, "w") as f:
        for p in poses:
            f.write(" ".join(repr(float(v)) for v in p.matrix34().reshape(-1)) + "\n")


class SequenceReader:
    """Iterates frames of a sequence directory."""

    def __init__(self, root: str):
        self.root = root
        intr_path = os.path.join(root, "intrinsics.txt")
        poses_path = os.path.join(root, "poses.txt")
        if not os.path.isfile(intr_path):
            raise FileNotFoundError(f"missing {intr_path}")
        if not os.path.isfile(poses_path):
            raise FileNotFoundError(f"missing {poses_path}")
        self.intrinsics = read_intrinsics(intr_path)
        self.poses = read_poses(poses_path)
        color_dir = os.path.join(root, "color")
        names = sorted(n for n in os.listdir(color_dir) if n.endswith(".png"))
        self.indices = [int(n[:-4]) for n in names]
        if len(self.indices) > len(self.poses):
            raise ValueError(
                f"{len(self.indices)} color frames but only {len(self.poses)} poses"
            )

    def __len__(self):
        return len(self.indices)

    def feature_path(self, t: int) -> str:
        return os.path.join(self.root, "features", f"{t:06d}.featpack")

    def label_path(self, t: int) -> str:
        return os.path.join(self.root, "labels", f"{t:06d}.png")

    def load_frame(self, i: int) -> Frame:
        t = self.indices[i]
        color = read_color_png(os.path.join(self.root, "color", f"{t:06d}.png"))
        depth = read_depth_png(os.path.join(self.root, "depth", f"{t:06d}.png"))
        if color.shape[:2] != depth.shape:
            raise ValueError(f"frame {t}: color {color.shape[:2]} vs depth {depth.shape}")
        return make_frame(color, depth, self.intrinsics, self.poses[i], timestamp=t)

    def load_gt_labels(self, i: int) -> np.ndarray:
        return read_label_png(self.label_path(self.indices[i]))

    def has_gt_labels(self) -> bool:
        return all(os.path.isfile(self.label_path(t)) for t in self.indices)
