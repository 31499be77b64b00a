"""Deterministic synthetic RGBD sequences with exact ground truth.

Scenes are axis-aligned rooms (y points down, floor at y=0) containing
boxes, vertical cylinders, and thin wall pictures. Rendering is a
vectorized ray cast per frame producing depth, flat-albedo color,
per-pixel class labels, and a synthetic deep-feature packet: class-coded
basis features plus one-hot probabilities for trained classes and
uniform probabilities for novel ones.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .features_io import FEATURE_DIM, FeaturePacket, save_packet
from .geometry import Frame, Intrinsics, Pose, axial_noise_sigma, make_frame
from .sequence_io import (write_color_png, write_depth_png, write_intrinsics,
                          write_label_png, write_poses)

EPS = 1e-9


@dataclass
class SceneClass:
    name: str
    trained_index: int | None = None  # probability slot; None marks a novel class
    albedo: tuple = (200, 200, 200)


@dataclass
class Box:
    lo: np.ndarray
    hi: np.ndarray
    class_id: int
    albedo: tuple | None = None  # overrides the class albedo

    def intersect(self, origin, dirs):
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (self.lo[None, None, :] - origin) / dirs
            t2 = (self.hi[None, None, :] - origin) / dirs
        tnear = np.minimum(t1, t2).max(axis=-1)
        tfar = np.maximum(t1, t2).min(axis=-1)
        hit = (tnear <= tfar) & (tnear > EPS)
        return np.where(hit, tnear, np.inf)


@dataclass
class Cylinder:
    center_xz: np.ndarray  # (cx, cz)
    radius: float
    y_top: float           # smaller y (up)
    y_base: float          # larger y (floor side)
    class_id: int
    albedo: tuple | None = None

    def intersect(self, origin, dirs):
        ox = origin[..., 0] - self.center_xz[0]
        oz = origin[..., 2] - self.center_xz[1]
        dx = dirs[..., 0]
        dz = dirs[..., 2]
        a = dx * dx + dz * dz
        b = 2 * (ox * dx + oz * dz)
        c = ox * ox + oz * oz - self.radius ** 2
        disc = b * b - 4 * a * c
        s = np.full(dirs.shape[:2], np.inf)
        ok = (disc > 0) & (a > EPS)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            root = (-b - sq) / (2 * a)
        y = origin[..., 1] + root * dirs[..., 1]
        side = ok & (root > EPS) & (y >= self.y_top) & (y <= self.y_base)
        s = np.where(side, root, s)
        # top cap
        dy = dirs[..., 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            tcap = (self.y_top - origin[..., 1]) / dy
        px = origin[..., 0] + tcap * dirs[..., 0] - self.center_xz[0]
        pz = origin[..., 2] + tcap * dirs[..., 2] - self.center_xz[1]
        cap = (np.abs(dy) > EPS) & (tcap > EPS) & (px * px + pz * pz <= self.radius ** 2)
        return np.minimum(s, np.where(cap, tcap, np.inf))


@dataclass
class Picture:
    """Thin rectangle hovering just off a wall plane."""

    wall: str            # one of x0, x1, z0, z1
    center: tuple        # in-plane coords: (y, z) for x walls, (x, y) for z walls
    size: tuple          # in-plane extents
    offset: float
    class_id: int
    albedo: tuple | None = None
    room: tuple = (0.0, 0.0, 0.0)  # (width, height, depth), set by the scene

    def _plane(self):
        w, h, d = self.room
        if self.wall == "x0":
            return 0, self.offset
        if self.wall == "x1":
            return 0, w - self.offset
        if self.wall == "z0":
            return 2, self.offset
        if self.wall == "z1":
            return 2, d - self.offset
        raise ValueError(f"unknown wall {self.wall}")

    def intersect(self, origin, dirs):
        axis, coord = self._plane()
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (coord - origin[..., axis]) / dirs[..., axis]
        p = origin + t[..., None] * dirs
        if axis == 0:
            a, b = p[..., 1], p[..., 2]
        else:
            a, b = p[..., 0], p[..., 1]
        ca, cb = self.center
        sa, sb = self.size
        inside = (np.abs(a - ca) <= sa / 2) & (np.abs(b - cb) <= sb / 2)
        ok = (np.abs(dirs[..., axis]) > EPS) & (t > EPS) & inside
        return np.where(ok, t, np.inf)


@dataclass
class NoiseSpec:
    depth: bool = False
    multiplier: float = 1.0      # scales sigma_axial in the depth noise
    feature_sigma: float = 0.05
    seed: int = 0


@dataclass
class SceneSpec:
    """Room plus objects, camera trajectory, and synthetic-feature config."""

    room: tuple                   # (width, height, depth) meters
    classes: list                 # list[SceneClass]; class id = list index
    floor_class: int
    wall_class: int
    ceiling_class: int
    objects: list = field(default_factory=list)
    poses: list = field(default_factory=list)
    intrinsics: Intrinsics | None = None
    num_prob_classes: int = 9
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def __post_init__(self):
        w, h, d = self.room
        for obj in self.objects:
            if isinstance(obj, Picture):
                obj.room = (w, h, d)
        for c in self.classes:
            if c.trained_index is not None and not (0 <= c.trained_index < self.num_prob_classes):
                raise ValueError(f"trained_index {c.trained_index} out of range")


def default_intrinsics(width=320, height=240) -> Intrinsics:
    f = 0.89 * width  # ~59 degree horizontal FOV
    return Intrinsics(f, f, width / 2.0 - 0.5, height / 2.0 - 0.5, width, height)


def look_at(eye, target) -> Pose:
    """Camera-to-world pose with +z toward target (y-down convention)."""
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z = z / np.linalg.norm(z)
    y_hint = np.array([0.0, 1.0, 0.0])
    x = np.cross(y_hint, z)
    if np.linalg.norm(x) < 1e-9:
        x = np.array([1.0, 0.0, 0.0])
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose(np.stack([x, y, z], axis=1), eye)


def arc_trajectory(center, radius, eye_y, lookat, angle_start, angle_end, frames):
    """Poses along a horizontal arc, all looking at a fixed point."""
    poses = []
    for t in range(frames):
        a = angle_start + (angle_end - angle_start) * (t / max(frames - 1, 1))
        eye = np.array([center[0] + radius * np.sin(a), eye_y,
                        center[1] + radius * np.cos(a)])
        poses.append(look_at(eye, lookat))
    return poses


def _room_intersections(spec: SceneSpec, origin, dirs):
    """(depth, class) of the nearest room surface along each ray."""
    w, h, d = spec.room
    planes = [
        (1, 0.0, spec.floor_class),       # floor y=0
        (1, -h, spec.ceiling_class),      # ceiling y=-h
        (0, 0.0, spec.wall_class),
        (0, w, spec.wall_class),
        (2, 0.0, spec.wall_class),
        (2, d, spec.wall_class),
    ]
    best = np.full(dirs.shape[:2], np.inf)
    cls = np.full(dirs.shape[:2], -1, dtype=np.int32)
    for axis, coord, class_id in planes:
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (coord - origin[..., axis]) / dirs[..., axis]
        ok = (np.abs(dirs[..., axis]) > EPS) & (t > EPS) & (t < best)
        p = origin + t[..., None] * dirs
        inb = np.ones_like(ok)
        for a, lim in ((0, (0.0, w)), (1, (-h, 0.0)), (2, (0.0, d))):
            if a == axis:
                continue
            inb &= (p[..., a] >= lim[0] - 1e-6) & (p[..., a] <= lim[1] + 1e-6)
        ok &= inb
        best = np.where(ok, t, best)
        cls = np.where(ok, class_id, cls)
    return best, cls


def render_raw(spec: SceneSpec, t: int):
    """Ray-cast frame t: (color uint8 RGB, depth float32 m, class labels int32)."""
    intr = spec.intrinsics or default_intrinsics()
    pose = spec.poses[t]
    h, w = intr.height, intr.width
    xs = (np.arange(w) - intr.cx) / intr.fx
    ys = (np.arange(h) - intr.cy) / intr.fy
    gx, gy = np.meshgrid(xs, ys)
    d_cam = np.stack([gx, gy, np.ones_like(gx)], axis=-1)
    dirs = d_cam @ pose.rotation.T
    origin = np.broadcast_to(pose.translation, dirs.shape)

    depth, cls = _room_intersections(spec, origin, dirs)
    obj_hit = np.full(depth.shape, -1, dtype=np.int32)
    for k, obj in enumerate(spec.objects):
        s = obj.intersect(origin, dirs)
        closer = s < depth
        depth = np.where(closer, s, depth)
        cls = np.where(closer, obj.class_id, cls)
        obj_hit = np.where(closer, k, obj_hit)

    if spec.noise.depth:
        rng = np.random.default_rng([spec.noise.seed, t, 7])
        depth = depth + rng.standard_normal(depth.shape) \
            * axial_noise_sigma(depth) * spec.noise.multiplier
        depth = np.maximum(depth, 0.05)

    albedo = np.array([c.albedo for c in spec.classes], dtype=np.uint8)
    color = albedo[np.maximum(cls, 0)]
    color[cls < 0] = 0
    for k, obj in enumerate(spec.objects):
        if obj.albedo is not None:
            color[obj_hit == k] = np.asarray(obj.albedo, dtype=np.uint8)
    depth = np.where(np.isfinite(depth), depth, 0.0).astype(np.float32)
    return color, depth, cls


def synth_packet(spec: SceneSpec, gt_labels: np.ndarray, t: int) -> FeaturePacket:
    """Class-coded deep features and probabilities for a rendered frame.

    Trained classes produce one-hot probability rows (entropy 0), novel
    classes uniform rows (maximal entropy), driving the entropy weight
    toward geometry exactly where the network is clueless.
    """
    h, w = gt_labels.shape
    n = spec.num_prob_classes
    rng = np.random.default_rng([spec.noise.seed, t, 11])
    basis = np.zeros((len(spec.classes), FEATURE_DIM), dtype=np.float64)
    for cid in range(len(spec.classes)):
        basis[cid, cid % FEATURE_DIM] = 1.0
    feat = basis[np.maximum(gt_labels, 0)]
    if spec.noise.feature_sigma > 0:
        feat = feat + rng.standard_normal(feat.shape) * spec.noise.feature_sigma

    prob = np.full((h, w, n), 1.0 / n, dtype=np.float64)
    for cid, c in enumerate(spec.classes):
        if c.trained_index is None:
            continue
        row = np.zeros(n)
        row[c.trained_index] = 1.0
        prob[gt_labels == cid] = row
    return FeaturePacket(feature_map=feat.astype(np.float32),
                         prob_map=prob.astype(np.float32))


def render_synthetic(spec: SceneSpec, t: int):
    """(Frame, ground-truth labels, FeaturePacket) for frame t."""
    intr = spec.intrinsics or default_intrinsics()
    color, depth, cls = render_raw(spec, t)
    frame = make_frame(color, depth, intr, spec.poses[t], timestamp=t)
    return frame, cls, synth_packet(spec, cls, t)


def write_sequence(spec: SceneSpec, out_dir: str, features: bool = True,
                   labels: bool = True):
    """Write the full sequence directory for a scene."""
    intr = spec.intrinsics or default_intrinsics()
    for sub in ["color", "depth"] + (["features"] if features else []) \
            + (["labels"] if labels else []):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    write_intrinsics(os.path.join(out_dir, "intrinsics.txt"), intr)
    write_poses(os.path.join(out_dir, "poses.txt"), spec.poses)
    for t in range(len(spec.poses)):
        color, depth, cls = render_raw(spec, t)
        write_color_png(os.path.join(out_dir, "color", f"{t:06d}.png"), color)
        write_depth_png(os.path.join(out_dir, "depth", f"{t:06d}.png"), depth)
        if labels:
            write_label_png(os.path.join(out_dir, "labels", f"{t:06d}.png"), cls)
        if features:
            save_packet(os.path.join(out_dir, "features", f"{t:06d}.featpack"),
                        synth_packet(spec, cls, t))
    return out_dir


# ---------------------------------------------------------------------------
# JSON round trip (human-editable scene files)

def scene_to_dict(spec: SceneSpec) -> dict:
    objs = []
    for o in spec.objects:
        albedo = None if o.albedo is None else list(o.albedo)
        if isinstance(o, Box):
            objs.append({"kind": "box", "lo": list(o.lo), "hi": list(o.hi),
                         "class_id": o.class_id, "albedo": albedo})
        elif isinstance(o, Cylinder):
            objs.append({"kind": "cylinder", "center_xz": list(o.center_xz),
                         "radius": o.radius, "y_top": o.y_top, "y_base": o.y_base,
                         "class_id": o.class_id, "albedo": albedo})
        elif isinstance(o, Picture):
            objs.append({"kind": "picture", "wall": o.wall, "center": list(o.center),
                         "size": list(o.size), "offset": o.offset,
                         "class_id": o.class_id, "albedo": albedo})
    intr = spec.intrinsics or default_intrinsics()
    return {
        "room": list(spec.room),
        "classes": [{"name": c.name, "trained_index": c.trained_index,
                     "albedo": list(c.albedo)} for c in spec.classes],
        "floor_class": spec.floor_class,
        "wall_class": spec.wall_class,
        "ceiling_class": spec.ceiling_class,
        "objects": objs,
        "poses": [p.matrix34().reshape(-1).tolist() for p in spec.poses],
        "intrinsics": [intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height],
        "num_prob_classes": spec.num_prob_classes,
        "noise": {"depth": spec.noise.depth, "multiplier": spec.noise.multiplier,
                  "feature_sigma": spec.noise.feature_sigma, "seed": spec.noise.seed},
    }


def scene_from_dict(d: dict) -> SceneSpec:
    objs = []
    for o in d.get("objects", []):
        kind = o["kind"]
        albedo = o.get("albedo")
        albedo = None if albedo is None else tuple(albedo)
        if kind == "box":
            objs.append(Box(np.array(o["lo"]), np.array(o["hi"]), o["class_id"],
                            albedo=albedo))
        elif kind == "cylinder":
            objs.append(Cylinder(np.array(o["center_xz"]), o["radius"],
                                 o["y_top"], o["y_base"], o["class_id"],
                                 albedo=albedo))
        elif kind == "picture":
            objs.append(Picture(o["wall"], tuple(o["center"]), tuple(o["size"]),
                                o["offset"], o["class_id"], albedo=albedo))
        else:
            raise ValueError(f"unknown object kind {kind}")
    fx, fy, cx, cy, w, h = d["intrinsics"]
    noise = d.get("noise", {})
    return SceneSpec(
        room=tuple(d["room"]),
        classes=[SceneClass(c["name"], c["trained_index"], tuple(c["albedo"]))
                 for c in d["classes"]],
        floor_class=d["floor_class"],
        wall_class=d["wall_class"],
        ceiling_class=d["ceiling_class"],
        objects=objs,
        poses=[Pose(np.array(row).reshape(3, 4)[:, :3], np.array(row).reshape(3, 4)[:, 3])
               for row in d["poses"]],
        intrinsics=Intrinsics(fx, fy, cx, cy, int(w), int(h)),
        num_prob_classes=d.get("num_prob_classes", 9),
        noise=NoiseSpec(depth=noise.get("depth", False),
                        multiplier=noise.get("multiplier", 1.0),
                        feature_sigma=noise.get("feature_sigma", 0.05),
                        seed=noise.get("seed", 0)),
    )


def save_scene(spec: SceneSpec, path: str):
    with open(path, "w") as f:
        json.dump(scene_to_dict(spec), f, indent=2)


def load_scene(path: str) -> SceneSpec:
    with open(path) as f:
        return scene_from_dict(json.load(f))


def demo_room(frames: int = 60, width: int = 320, height: int = 240,
              depth_noise: bool = False, noise_multiplier: float = 3.0,
              seed: int = 0) -> SceneSpec:
    """The reference test room: 3 trained objects, 2 novel objects.

    Trained classes (one-hot probabilities): floor, wall, ceiling, crate,
    block, drum. Novel classes (uniform probabilities): picture, totem.
    """
    classes = [
        SceneClass("floor", 0, (168, 152, 130)),
        SceneClass("wall", 1, (196, 196, 188)),
        SceneClass("ceiling", 2, (240, 240, 238)),
        SceneClass("crate", 3, (170, 90, 40)),
        SceneClass("block", 4, (60, 110, 180)),
        SceneClass("drum", 5, (70, 150, 70)),
        SceneClass("picture", None, (180, 40, 50)),
        SceneClass("totem", None, (235, 200, 60)),
    ]
    room = (5.0, 2.5, 6.0)
    objects = [
        Box(np.array([1.0, -0.55, 3.6]), np.array([1.9, 0.0, 4.4]), 3),    # crate
        Box(np.array([3.1, -0.8, 3.9]), np.array([3.8, 0.0, 4.5]), 4),     # block
        Cylinder(np.array([2.55, 3.4]), 0.3, -0.9, 0.0, 5),                # drum
        Picture("z1", (2.5, -1.45), (1.3, 0.85), 0.002, 6),                # picture
        Box(np.array([4.05, -1.5, 4.6]), np.array([4.45, 0.0, 5.0]), 7),   # totem
    ]
    poses = arc_trajectory(center=(2.55, 4.15), radius=2.9, eye_y=-1.25,
                           lookat=np.array([2.6, -0.6, 4.3]),
                           angle_start=np.pi - 0.45, angle_end=np.pi + 0.45,
                           frames=frames)
    return SceneSpec(
        room=room, classes=classes, floor_class=0, wall_class=1, ceiling_class=2,
        objects=objects, poses=poses,
        intrinsics=default_intrinsics(width, height),
        num_prob_classes=9,
        noise=NoiseSpec(depth=depth_noise, multiplier=noise_multiplier, seed=seed),
    )


def busy_room(frames: int = 20, width: int = 320, height: int = 240,
              tiles: int = 9, seed: int = 0) -> SceneSpec:
    """A cluttered variant of the demo room for load testing.

    The rear wall and floor are tiled with differently-colored patches of
    their own class, so the map accumulates a few hundred segments.
    """
    spec = demo_room(frames=frames, width=width, height=height, seed=seed)
    rng = np.random.default_rng([seed, 99])
    w, h, d = spec.room
    # seamless wall panels on the rear wall (class wall)
    for i in range(tiles):
        for j in range(max(2, tiles // 2)):
            cx = (i + 0.5) * w / tiles
            cy = -(j + 0.5) * h / max(2, tiles // 2)
            albedo = tuple(int(v) for v in rng.integers(60, 250, 3))
            spec.objects.append(Picture(
                "z1", (cx, cy), (w / tiles, h / max(2, tiles // 2)),
                0.002, spec.wall_class, albedo=albedo, room=spec.room))
    # seamless floor tiles (class floor), thin boxes
    for i in range(tiles):
        for j in range(tiles // 2):
            x0 = i * w / tiles
            z0 = 2.4 + j * (d - 2.4) / (tiles // 2)
            sx = w / tiles
            sz = (d - 2.4) / (tiles // 2)
            albedo = tuple(int(v) for v in rng.integers(60, 250, 3))
            spec.objects.append(Box(
                np.array([x0, -0.004, z0]), np.array([x0 + sx, 0.0, z0 + sz]),
                spec.floor_class, albedo=albedo))
    return spec
