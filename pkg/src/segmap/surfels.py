"""Dense surfel map with per-surfel segment labels.

Surfels are fused frame by frame via projective association, rendered
back to the image plane with z-buffered splats, and relabeled from the
per-frame 2D segmentation through overlap voting. Labels are map-wide
segment ids; the per-segment feature store lives in segment_table.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .geometry import Frame, Intrinsics, Pose, axial_noise_sigma, project
from .slic import FrameSegmentation

UNLABELED = -1
MAX_SPLAT_HALF = 8


@dataclass
class AssociationGates:
    depth_sigmas: float = 3.0    # depth gate = depth_sigmas * sigma_axial(z)
    normal_max_deg: float = 20.0


class SurfelMap:
    """Growable structure-of-arrays surfel store."""

    def __init__(self, capacity: int = 1 << 14):
        self._n = 0
        self.positions = np.zeros((capacity, 3))
        self.normals = np.zeros((capacity, 3))
        self.radii = np.zeros(capacity)
        self.confidence = np.zeros(capacity)
        self.labels = np.full(capacity, UNLABELED, dtype=np.int64)
        # False while the normal is only a view-direction fallback
        self.normal_known = np.zeros(capacity, dtype=bool)
        self.next_label = 0

    def __len__(self):
        return self._n

    def _grow(self, extra: int):
        need = self._n + extra
        cap = self.positions.shape[0]
        if need <= cap:
            return
        while cap < need:
            cap *= 2
        for name in ("positions", "normals", "radii", "confidence", "labels",
                     "normal_known"):
            arr = getattr(self, name)
            new = np.zeros((cap,) + arr.shape[1:], dtype=arr.dtype)
            if name == "labels":
                new.fill(UNLABELED)
            new[: self._n] = arr[: self._n]
            setattr(self, name, new)

    def append(self, positions, normals, radii, confidence, labels, normal_known):
        k = len(positions)
        self._grow(k)
        s = slice(self._n, self._n + k)
        self.positions[s] = positions
        self.normals[s] = normals
        self.radii[s] = radii
        self.confidence[s] = confidence
        self.labels[s] = labels
        self.normal_known[s] = normal_known
        self._n += k
        return np.arange(s.start, s.stop)

    def view(self, name):
        return getattr(self, name)[: self._n]

    def allocate_label(self) -> int:
        label = self.next_label
        self.next_label += 1
        return label

    def label_counts(self) -> dict[int, int]:
        labels = self.view("labels")
        labeled = labels[labels >= 0]
        if labeled.size == 0:
            return {}
        counts = np.bincount(labeled)
        return {int(l): int(c) for l, c in enumerate(counts) if c > 0}

    def surfel_store_bytes(self) -> int:
        return self._n * (3 * 8 + 3 * 8 + 8 + 8 + 8)


@dataclass
class RenderedSegmentMap:
    """Segment labels splatted to an image plane with a z-buffer."""

    labels: np.ndarray   # (H, W) int64, UNLABELED where nothing projects
    depth: np.ndarray    # (H, W) float64, inf where empty
    index: np.ndarray    # (H, W) int64 surfel index, -1 where empty


def _project_to(pose: Pose, intr: Intrinsics, points: np.ndarray):
    inv = pose.inverse()
    cam = points @ inv.rotation.T + inv.translation
    return project(cam, intr)


def _splat(smap: SurfelMap, pose: Pose, intr: Intrinsics, half_px: np.ndarray):
    u, v, z = _project_to(pose, intr, smap.view("positions"))
    depth_buf = np.full((intr.height, intr.width), np.inf)
    index_buf = np.full((intr.height, intr.width), -1, dtype=np.int64)
    if len(smap):
        _kernels.splat_zbuffer(
            np.ascontiguousarray(u), np.ascontiguousarray(v),
            np.ascontiguousarray(z), np.ascontiguousarray(half_px),
            intr.height, intr.width, depth_buf, index_buf,
        )
    return depth_buf, index_buf, z


def render_segment_map(smap: SurfelMap, pose: Pose, intr: Intrinsics) -> RenderedSegmentMap:
    """Z-buffered splat render of segment labels (splat radius >= 1 px)."""
    if len(smap) == 0:
        return RenderedSegmentMap(
            labels=np.full((intr.height, intr.width), UNLABELED, dtype=np.int64),
            depth=np.full((intr.height, intr.width), np.inf),
            index=np.full((intr.height, intr.width), -1, dtype=np.int64),
        )
    u, v, z = _project_to(pose, intr, smap.view("positions"))
    with np.errstate(invalid="ignore", divide="ignore"):
        r_px = smap.view("radii") * intr.fx / np.where(z > 0, z, np.inf)
    half = np.clip(np.round(r_px), 1, MAX_SPLAT_HALF).astype(np.int64)
    depth_buf = np.full((intr.height, intr.width), np.inf)
    index_buf = np.full((intr.height, intr.width), -1, dtype=np.int64)
    _kernels.splat_zbuffer(
        np.ascontiguousarray(u), np.ascontiguousarray(v),
        np.ascontiguousarray(z), half, intr.height, intr.width,
        depth_buf, index_buf,
    )
    labels = np.full((intr.height, intr.width), UNLABELED, dtype=np.int64)
    hit = index_buf >= 0
    labels[hit] = smap.view("labels")[index_buf[hit]]
    return RenderedSegmentMap(labels=labels, depth=depth_buf, index=index_buf)


@dataclass
class FuseResult:
    assoc_index: np.ndarray  # (H, W) surfel index per valid pixel, -1 elsewhere
    num_updated: int = 0
    num_inserted: int = 0


def fuse_frame(smap: SurfelMap, frame: Frame,
               gates: AssociationGates | None = None) -> FuseResult:
    """Fuse one frame into the map.

    Valid pixels that projectively re-find a surfel within the depth and
    normal gates update it (confidence-weighted position/normal blend);
    the rest insert new surfels with radius depth/fx * sqrt(2).
    """
    gates = gates or AssociationGates()
    intr = frame.intrinsics
    h, w = frame.shape
    valid = frame.valid_depth

    world_pts = frame.vertex_map @ frame.pose.rotation.T + frame.pose.translation
    world_nrm = frame.normal_map @ frame.pose.rotation.T
    # fallback normal for valid-depth pixels without a normal estimate:
    # unit vector pointing back toward the camera center
    back = frame.pose.translation[None, None, :] - world_pts
    back_len = np.linalg.norm(back, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        back = back / back_len
    obs_nrm = np.where(frame.valid_normal[..., None], world_nrm, back)

    assoc = np.full((h, w), -1, dtype=np.int64)
    updated = 0

    if len(smap):
        # 1-px splatted index so small reprojection offsets still re-find
        ones = np.ones(len(smap), dtype=np.int64)
        depth_buf, index_buf, _ = _splat(smap, frame.pose, intr, ones)
        cand = index_buf >= 0
        cand &= valid
        ys, xs = np.nonzero(cand)
        idx = index_buf[ys, xs]
        z_obs = frame.depth[ys, xs].astype(np.float64)
        z_surf = depth_buf[ys, xs]
        depth_ok = np.abs(z_surf - z_obs) <= gates.depth_sigmas * axial_noise_sigma(z_obs)
        n_surf = smap.view("normals")[idx]
        n_obs = obs_nrm[ys, xs]
        cos_gate = np.cos(np.deg2rad(gates.normal_max_deg))
        nrm_ok = np.einsum("ij,ij->i", n_surf, n_obs) >= cos_gate
        # gate only when both sides carry estimated normals
        nrm_ok |= ~frame.valid_normal[ys, xs]
        nrm_ok |= ~smap.view("normal_known")[idx]
        ok = depth_ok & nrm_ok
        ys, xs, idx = ys[ok], xs[ok], idx[ok]
        # a surfel can be the candidate of several pixels; the first
        # (scanline order) updates it, the rest just mark coverage so
        # the surface is not re-inserted
        first = np.zeros(len(idx), dtype=bool)
        first[np.unique(idx, return_index=True)[1]] = True
        assoc[ys, xs] = idx
        ys, xs, idx = ys[first], xs[first], idx[first]

        conf = smap.confidence[idx]
        wsum = conf + 1.0
        smap.positions[idx] = (conf[:, None] * smap.positions[idx]
                               + world_pts[ys, xs]) / wsum[:, None]
        blend_normal = frame.valid_normal[ys, xs]
        bidx = idx[blend_normal]
        # a first real estimate replaces a fallback normal outright
        known = smap.normal_known[bidx]
        bconf = np.where(known, conf[blend_normal], 0.0)
        bn = (bconf[:, None] * smap.normals[bidx]
              + world_nrm[ys[blend_normal], xs[blend_normal]]) / (bconf[:, None] + 1.0)
        ln = np.linalg.norm(bn, axis=1, keepdims=True)
        good = ln[:, 0] > 0
        smap.normals[bidx[good]] = bn[good] / ln[good]
        smap.normal_known[bidx[good]] = True
        smap.confidence[idx] = wsum
        updated = len(idx)

    new_mask = valid & (assoc < 0)
    ys, xs = np.nonzero(new_mask)
    if len(ys):
        depth = frame.depth[ys, xs].astype(np.float64)
        radii = depth / intr.fx * np.sqrt(2.0)
        new_idx = smap.append(
            positions=world_pts[ys, xs],
            normals=obs_nrm[ys, xs],
            radii=radii,
            confidence=np.ones(len(ys)),
            labels=np.full(len(ys), UNLABELED, dtype=np.int64),
            normal_known=frame.valid_normal[ys, xs],
        )
        assoc[ys, xs] = new_idx
    return FuseResult(assoc_index=assoc, num_updated=updated, num_inserted=len(ys))


NEW_SEGMENT = -2


@dataclass
class LabelCorrespondence:
    """Frame-segment id -> map label (or NEW_SEGMENT), plus merge events."""

    assignment: dict = field(default_factory=dict)
    overlap: dict = field(default_factory=dict)     # frame id -> {map label: ratio}
    merges: list = field(default_factory=list)      # (winner, loser) map labels


def propagate_labels(rendered: RenderedSegmentMap, frame_seg: FrameSegmentation,
                     threshold: float = 0.3) -> LabelCorrespondence:
    """Vote each frame segment onto rendered map labels by pixel overlap.

    A segment takes the argmax map label when its overlap ratio passes
    the threshold, otherwise NEW_SEGMENT. When several map labels each
    pass the threshold on one segment they are queued to merge into the
    argmax label -- but only if the segment also covers the threshold
    fraction of each label's visible footprint; without that symmetric
    check a few boundary pixels can fuse unrelated segments.
    """
    if rendered.labels.shape != frame_seg.labels.shape:
        raise ValueError("rendered map and frame segmentation sizes differ")
    corr = LabelCorrespondence()
    fs = frame_seg.labels
    rm = rendered.labels
    sel = fs >= 0
    fs_ids = fs[sel].astype(np.int64)
    rm_ids = rm[sel].astype(np.int64)
    n_seg = frame_seg.num_segments
    totals = np.bincount(fs_ids, minlength=n_seg)

    hit = rm_ids >= 0
    if hit.any():
        map_labels, rm_compact = np.unique(rm_ids[hit], return_inverse=True)
        joint = np.zeros((n_seg, map_labels.size), dtype=np.int64)
        np.add.at(joint, (fs_ids[hit], rm_compact), 1)
    else:
        map_labels = np.array([], dtype=np.int64)
        joint = np.zeros((n_seg, 0), dtype=np.int64)
    # visible footprint of each map label across the whole image
    rm_all = rm[rm >= 0].astype(np.int64)
    visible = {int(l): int(c) for l, c in
               zip(*np.unique(rm_all, return_counts=True))} if rm_all.size else {}

    for s in range(n_seg):
        if totals[s] == 0:
            continue
        ratios = joint[s] / totals[s]
        passing = np.nonzero(ratios >= threshold)[0]
        corr.overlap[s] = {int(map_labels[k]): float(ratios[k]) for k in np.nonzero(joint[s])[0]}
        if passing.size == 0:
            corr.assignment[s] = NEW_SEGMENT
            continue
        best = passing[np.lexsort((map_labels[passing], -ratios[passing]))][0]
        winner = int(map_labels[best])
        corr.assignment[s] = winner
        covered = [k for k in passing
                   if joint[s, k] >= threshold * visible.get(int(map_labels[k]), np.inf)]
        if len(covered) >= 2 and any(int(map_labels[k]) == winner for k in covered):
            for k in covered:
                loser = int(map_labels[k])
                if loser != winner:
                    corr.merges.append((winner, loser))
    return corr


@dataclass
class RelabelResult:
    new_labels: dict            # frame segment id -> freshly allocated map label
    merges: list                # resolved (winner, loser) pairs actually applied
    frame_to_map: np.ndarray    # LUT frame segment id -> final map label


def relabel_surfels(smap: SurfelMap, corr: LabelCorrespondence,
                    frame_seg: FrameSegmentation, assoc_index: np.ndarray) -> RelabelResult:
    """Write propagated labels onto this frame's surfels and apply merges."""
    redirect: dict[int, int] = {}

    def resolve(l):
        while l in redirect:
            l = redirect[l]
        return l

    merges = []
    for winner, loser in corr.merges:
        w, l = resolve(winner), resolve(loser)
        if w == l:
            continue
        w, l = (w, l) if w < l else (l, w)
        redirect[l] = w
        merges.append((w, l))

    if merges:
        labels = smap.view("labels")
        lut_max = int(labels.max()) + 1 if len(smap) else 0
        if lut_max > 0:
            lut = np.arange(lut_max, dtype=np.int64)
            for l in range(lut_max):
                lut[l] = resolve(l)
            pos = labels >= 0
            labels[pos] = lut[labels[pos]]

    new_labels = {}
    n_seg = frame_seg.num_segments
    frame_to_map = np.full(n_seg, UNLABELED, dtype=np.int64)
    for s in range(n_seg):
        target = corr.assignment.get(s, NEW_SEGMENT)
        if target == NEW_SEGMENT:
            label = smap.allocate_label()
            new_labels[s] = label
            frame_to_map[s] = label
        else:
            frame_to_map[s] = resolve(int(target))

    fs = frame_seg.labels
    sel = (fs >= 0) & (assoc_index >= 0)
    idx = assoc_index[sel]
    smap.labels[idx] = frame_to_map[fs[sel]]
    return RelabelResult(new_labels=new_labels, merges=merges, frame_to_map=frame_to_map)


def make_palette(n: int = 256) -> np.ndarray:
    """Fixed distinctive color palette (golden-angle hues), uint8 (n, 3)."""
    hues = (np.arange(n) * 0.6180339887498949) % 1.0
    sat = np.where(np.arange(n) % 3 == 1, 0.55, 0.85)
    val = np.where(np.arange(n) % 3 == 2, 0.7, 0.95)
    h6 = hues * 6.0
    i = h6.astype(int) % 6
    f = h6 - np.floor(h6)
    p = val * (1 - sat)
    q = val * (1 - f * sat)
    t = val * (1 - (1 - f) * sat)
    rgb = np.choose(i[:, None], [
        np.stack([val, t, p], 1), np.stack([q, val, p], 1),
        np.stack([p, val, t], 1), np.stack([p, q, val], 1),
        np.stack([t, p, val], 1), np.stack([val, p, q], 1),
    ])
    return np.clip(np.round(rgb * 255), 0, 255).astype(np.uint8)


PALETTE = make_palette()


def export_ply(smap: SurfelMap, path: str, color_ids: np.ndarray | None = None):
    """Binary little-endian PLY with x,y,z,nx,ny,nz and palette colors.

    ``color_ids`` defaults to the surfel segment labels; pass cluster ids
    to color by cluster. Negative ids render gray.
    """
    n = len(smap)
    ids = smap.view("labels") if color_ids is None else np.asarray(color_ids)
    colors = np.full((n, 3), 128, dtype=np.uint8)
    pos_ids = ids >= 0
    colors[pos_ids] = PALETTE[ids[pos_ids] % len(PALETTE)]
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {n}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property float nx\nproperty float ny\nproperty float nz\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
    )
    rec = np.zeros(n, dtype=[("xyz", "<f4", 3), ("n", "<f4", 3), ("rgb", "u1", 3)])
    rec["xyz"] = smap.view("positions").astype("<f4")
    rec["n"] = smap.view("normals").astype("<f4")
    rec["rgb"] = colors
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(rec.tobytes())
