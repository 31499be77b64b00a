"""RGBD SLIC superpixels.

Local k-means over pixels with a joint color/normal/position metric:
    D = d_lab + alpha * d_n + beta * d_xy
with each term an L2 norm. Pixels without depth are never assigned;
pixels or centers without a valid normal fall back to a fixed normal
penalty so low-geometry regions still segment on color.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .geometry import Frame, transform_directions, transform_points

INVALID_LABEL = -1
MIN_VALID_FRACTION = 0.01


class InsufficientGeometryError(ValueError):
    """Frame has too few valid-depth pixels to segment."""


@dataclass
class SlicParams:
    target_superpixels: int = 250
    alpha: float = 110.0
    beta: float = 0.5
    iterations: int = 5

    def __post_init__(self):
        if self.target_superpixels <= 0 or self.alpha <= 0 or self.beta <= 0 \
                or self.iterations <= 0:
            raise ValueError("SLIC parameters must be positive")


@dataclass
class Superpixel:
    """Per-segment aggregates; vertex and normal are in world coordinates."""

    id: int
    pixel_count: int
    mean_lab: np.ndarray
    mean_vertex: np.ndarray
    mean_normal: np.ndarray
    centroid: np.ndarray  # (y, x) pixel coords
    mean_depth: float     # mean camera-frame depth, drives the noise gate
    normal_count: int = 0
    geometry_valid: bool = True


@dataclass
class FrameSegmentation:
    """A partition of the valid-depth pixels plus per-segment aggregates."""

    labels: np.ndarray          # (H, W) int32, INVALID_LABEL where no depth
    segments: list = field(default_factory=list)

    @property
    def num_segments(self) -> int:
        return len(self.segments)


@dataclass
class SlicCenter:
    """Cluster center aggregates; normal is None when no estimate exists."""

    lab: np.ndarray
    normal: np.ndarray | None
    yx: np.ndarray


def center_from_pixel(frame: Frame, pixel) -> SlicCenter:
    y, x = pixel
    normal = frame.normal_map[y, x] if frame.valid_normal[y, x] else None
    return SlicCenter(lab=frame.color_lab[y, x].astype(np.float64),
                      normal=normal, yx=np.array([y, x], dtype=np.float64))


def slic_distance(u, center: SlicCenter, frame: Frame, params: SlicParams) -> float:
    """RGBD SLIC distance between pixel (y, x) and a cluster center.

    Either side lacking a normal estimate contributes the fixed penalty
    instead of the normal term.
    """
    uy, ux = u
    d_lab = float(np.linalg.norm(frame.color_lab[uy, ux].astype(np.float64) - center.lab))
    if frame.valid_normal[uy, ux] and center.normal is not None:
        d_n = float(np.linalg.norm(frame.normal_map[uy, ux] - center.normal))
    else:
        d_n = _kernels.NORMAL_PENALTY
    d_xy = float(np.hypot(uy - center.yx[0], ux - center.yx[1]))
    return d_lab + params.alpha * d_n + params.beta * d_xy


def _color_gradient(lab: np.ndarray, valid: np.ndarray) -> np.ndarray:
    g = np.full(lab.shape[:2], np.inf)
    gx = np.zeros(lab.shape[:2])
    gy = np.zeros(lab.shape[:2])
    gx[:, :-1] = ((lab[:, 1:] - lab[:, :-1]) ** 2).sum(axis=-1)
    gy[:-1, :] = ((lab[1:, :] - lab[:-1, :]) ** 2).sum(axis=-1)
    g[valid] = (gx + gy)[valid]
    return g


def _seed_centers(frame: Frame, target: int):
    h, w = frame.shape
    step = np.sqrt(h * w / target)
    ny = max(1, int(round(h / step)))
    nx = max(1, int(round(w / step)))
    grad = _color_gradient(frame.color_lab.astype(np.float64), frame.valid_depth)
    seeds = []
    for i in range(ny):
        for j in range(nx):
            cy = int((i + 0.5) * h / ny)
            cx = int((j + 0.5) * w / nx)
            y0, y1 = max(0, cy - 1), min(h, cy + 2)
            x0, x1 = max(0, cx - 1), min(w, cx + 2)
            patch = grad[y0:y1, x0:x1]
            if np.isfinite(patch).any():
                dy, dx = np.unravel_index(np.argmin(patch), patch.shape)
                seeds.append((y0 + dy, x0 + dx))
                continue
            # whole grid cell as fallback when the 3x3 has no valid depth
            cy0, cy1 = int(i * h / ny), int((i + 1) * h / ny)
            cx0, cx1 = int(j * w / nx), int((j + 1) * w / nx)
            cell = grad[cy0:cy1, cx0:cx1]
            if cell.size and np.isfinite(cell).any():
                dy, dx = np.unravel_index(np.argmin(cell), cell.shape)
                seeds.append((cy0 + dy, cx0 + dx))
    return seeds, step


def _update_centers(frame, labels, K):
    h, w = frame.shape
    flat = labels.reshape(-1)
    sel = flat >= 0
    idx = flat[sel]
    counts = np.bincount(idx, minlength=K).astype(np.float64)
    lab = frame.color_lab.reshape(-1, 3).astype(np.float64)[sel]
    lab_mean = np.zeros((K, 3))
    for c in range(3):
        lab_mean[:, c] = np.bincount(idx, weights=lab[:, c], minlength=K)
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    cy = np.bincount(idx, weights=ys.reshape(-1)[sel], minlength=K)
    cx = np.bincount(idx, weights=xs.reshape(-1)[sel], minlength=K)
    nz = counts > 0
    lab_mean[nz] /= counts[nz, None]
    yx = np.zeros((K, 2))
    yx[nz, 0] = cy[nz] / counts[nz]
    yx[nz, 1] = cx[nz] / counts[nz]

    nsel = sel & frame.valid_normal.reshape(-1)
    nidx = flat[nsel]
    nrm = frame.normal_map.reshape(-1, 3)[nsel]
    n_sum = np.zeros((K, 3))
    for c in range(3):
        n_sum[:, c] = np.bincount(nidx, weights=nrm[:, c], minlength=K)
    n_len = np.linalg.norm(n_sum, axis=1)
    n_valid = n_len > 1e-9
    n_mean = np.zeros((K, 3))
    n_mean[n_valid] = n_sum[n_valid] / n_len[n_valid, None]
    return counts, lab_mean, yx, n_mean, n_valid


def _fill_unassigned(labels, valid):
    """Assign leftover valid pixels from labeled 4-neighbors (fixed priority)."""
    while True:
        holes = valid & (labels < 0)
        if not holes.any():
            return
        cand = np.full(labels.shape, INVALID_LABEL, dtype=np.int32)
        for shift in ((-1, 0), (0, -1), (1, 0), (0, 1)):
            nb = np.roll(labels, shift, axis=(0, 1))
            if shift == (-1, 0):
                nb[-1, :] = INVALID_LABEL
            elif shift == (1, 0):
                nb[0, :] = INVALID_LABEL
            elif shift == (0, -1):
                nb[:, -1] = INVALID_LABEL
            else:
                nb[:, 0] = INVALID_LABEL
            take = holes & (cand < 0) & (nb >= 0)
            cand[take] = nb[take]
        filled = holes & (cand >= 0)
        if not filled.any():
            # isolated valid islands: give each its own fresh label
            comp, ncomp = _components(np.where(holes, 0, INVALID_LABEL))
            base = labels.max() + 1
            labels[holes] = comp[holes] + base
            return
        labels[filled] = cand[filled]


def _components(labels):
    comp = np.full(labels.shape, -1, dtype=np.int32)
    stack = np.empty((labels.size, 2), dtype=np.int32)
    ncomp = _kernels.label_components(labels.astype(np.int32), comp, stack)
    return comp, ncomp


def _comp_adjacency(comp):
    """Pairs of adjacent component ids with shared-boundary pixel counts."""
    pairs = []
    a = comp[:, :-1].reshape(-1)
    b = comp[:, 1:].reshape(-1)
    m = (a >= 0) & (b >= 0) & (a != b)
    pairs.append(np.stack([a[m], b[m]], axis=1))
    a = comp[:-1, :].reshape(-1)
    b = comp[1:, :].reshape(-1)
    m = (a >= 0) & (b >= 0) & (a != b)
    pairs.append(np.stack([a[m], b[m]], axis=1))
    if not pairs:
        return {}
    all_pairs = np.concatenate(pairs, axis=0)
    lo = np.minimum(all_pairs[:, 0], all_pairs[:, 1])
    hi = np.maximum(all_pairs[:, 0], all_pairs[:, 1])
    key = lo.astype(np.int64) * (comp.max() + 1) + hi
    uniq, counts = np.unique(key, return_counts=True)
    adj = {}
    ncomp = comp.max() + 1
    for k, c in zip(uniq, counts):
        i, j = int(k // ncomp), int(k % ncomp)
        adj.setdefault(i, []).append((j, int(c)))
        adj.setdefault(j, []).append((i, int(c)))
    return adj


def enforce_connectivity(labels: np.ndarray, min_size: int = 0) -> np.ndarray:
    """Make every label a single 4-connected region of at least ``min_size``.

    Each label keeps its largest component; orphan components and
    undersized components are relabeled to the largest adjacent
    component's label (or get fresh labels when isolated). Output labels
    are contiguous from 0.
    """
    comp, ncomp = _components(labels)
    if ncomp == 0:
        return labels
    flat_c = comp.reshape(-1)
    flat_l = labels.reshape(-1)
    sel = flat_c >= 0
    sizes = np.bincount(flat_c[sel], minlength=ncomp)
    comp_label = np.full(ncomp, INVALID_LABEL, dtype=np.int64)
    comp_label[flat_c[sel]] = flat_l[sel]
    owners = {}
    for c in range(ncomp):
        if sizes[c] < min_size:
            continue
        l = comp_label[c]
        best = owners.get(l)
        if best is None or sizes[c] > sizes[best]:
            owners[l] = c
    owner_set = set(owners.values())
    if not owner_set:  # everything undersized: keep the largest component
        owner_set = {int(np.argmax(sizes))}
    adj = _comp_adjacency(comp)
    resolved = {c: comp_label[c] for c in owner_set}
    pending = [c for c in range(ncomp) if c not in owner_set]
    next_label = int(labels.max()) + 1
    while pending:
        progressed = False
        deferred = []
        for c in pending:
            neigh = [(sizes[n], -n, n) for n, _ in adj.get(c, []) if n in resolved]
            if neigh:
                neigh.sort(reverse=True)
                resolved[c] = resolved[neigh[0][2]]
                progressed = True
            else:
                deferred.append(c)
        if not progressed:
            # cluster of orphans with no resolved neighbor: largest becomes new
            deferred.sort(key=lambda c: (-sizes[c], c))
            resolved[deferred[0]] = next_label
            next_label += 1
            pending = deferred[1:]
            continue
        pending = deferred
    out = np.full_like(labels, INVALID_LABEL)
    lut = np.array([resolved.get(c, INVALID_LABEL) for c in range(ncomp)], dtype=np.int64)
    out[sel.reshape(labels.shape)] = lut[comp[sel.reshape(labels.shape)]]
    return _contiguous(out)


def _contiguous(labels):
    """Renumber labels to 0..K-1 in order of first appearance (scan order)."""
    flat = labels.reshape(-1)
    sel = flat >= 0
    uniq, inv = np.unique(flat[sel], return_inverse=True)
    order = np.full(uniq.size, -1, dtype=np.int64)
    first = np.full(uniq.size, flat.size, dtype=np.int64)
    idxs = np.nonzero(sel)[0]
    np.minimum.at(first, inv, idxs)
    rank = np.argsort(first, kind="stable")
    order[rank] = np.arange(uniq.size)
    out = labels.copy().reshape(-1)
    out[sel] = order[inv]
    return out.reshape(labels.shape)


def build_aggregates(frame: Frame, labels: np.ndarray) -> list:
    """Per-label Superpixel aggregates in world coordinates."""
    flat = labels.reshape(-1)
    sel = flat >= 0
    idx = flat[sel]
    K = int(idx.max()) + 1 if idx.size else 0
    counts = np.bincount(idx, minlength=K)
    lab = frame.color_lab.reshape(-1, 3).astype(np.float64)[sel]
    vtx = frame.vertex_map.reshape(-1, 3)[sel]
    dep = frame.depth.reshape(-1).astype(np.float64)[sel]
    h, w = frame.shape
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    lab_sum = np.zeros((K, 3))
    vtx_sum = np.zeros((K, 3))
    for c in range(3):
        lab_sum[:, c] = np.bincount(idx, weights=lab[:, c], minlength=K)
        vtx_sum[:, c] = np.bincount(idx, weights=vtx[:, c], minlength=K)
    dep_sum = np.bincount(idx, weights=dep, minlength=K)
    cy = np.bincount(idx, weights=ys.reshape(-1)[sel], minlength=K)
    cx = np.bincount(idx, weights=xs.reshape(-1)[sel], minlength=K)

    nsel = sel & frame.valid_normal.reshape(-1)
    nidx = flat[nsel]
    nrm = frame.normal_map.reshape(-1, 3)[nsel]
    n_counts = np.bincount(nidx, minlength=K)
    n_sum = np.zeros((K, 3))
    for c in range(3):
        n_sum[:, c] = np.bincount(nidx, weights=nrm[:, c], minlength=K)

    segments = []
    for k in range(K):
        cnt = int(counts[k])
        if cnt == 0:
            continue
        mean_v_cam = vtx_sum[k] / cnt
        n_len = np.linalg.norm(n_sum[k])
        geo_ok = n_counts[k] > 0 and n_len > 1e-9
        if geo_ok:
            n_world = transform_directions(n_sum[k] / n_len, frame.pose)
        else:
            n_world = np.zeros(3)
        segments.append(Superpixel(
            id=k,
            pixel_count=cnt,
            mean_lab=lab_sum[k] / cnt,
            mean_vertex=transform_points(mean_v_cam, frame.pose),
            mean_normal=n_world,
            centroid=np.array([cy[k] / cnt, cx[k] / cnt]),
            mean_depth=float(dep_sum[k] / cnt),
            normal_count=int(n_counts[k]),
            geometry_valid=bool(geo_ok),
        ))
    return segments


def dump_segments_csv(seg: FrameSegmentation, path: str):
    """Debug export of per-segment aggregates."""
    with open(path, "w") as f:
        f.write("id,count,l,a,b,vx,vy,vz,nx,ny,nz,geometry_valid\n")
        for s in seg.segments:
            vals = [str(s.id), str(s.pixel_count)]
            vals += [repr(float(x)) for x in s.mean_lab]
            vals += [repr(float(x)) for x in s.mean_vertex]
            vals += [repr(float(x)) for x in s.mean_normal]
            vals.append("1" if s.geometry_valid else "0")
            f.write(",".join(vals) + "\n")


def run_slic(frame: Frame, params: SlicParams | None = None) -> FrameSegmentation:
    """Segment a frame into roughly ``target_superpixels`` superpixels."""
    params = params or SlicParams()
    h, w = frame.shape
    valid = frame.valid_depth
    if valid.mean() < MIN_VALID_FRACTION:
        raise InsufficientGeometryError("insufficient geometry: <1% valid depth")

    seeds, step = _seed_centers(frame, params.target_superpixels)
    if not seeds:
        raise InsufficientGeometryError("insufficient geometry: no valid seeds")
    K = len(seeds)
    seed_yx = np.array(seeds, dtype=np.int64)
    centers_yx = seed_yx.astype(np.float64)
    centers_lab = frame.color_lab[seed_yx[:, 0], seed_yx[:, 1]].astype(np.float64)
    centers_n = frame.normal_map[seed_yx[:, 0], seed_yx[:, 1]].copy()
    centers_n_valid = frame.valid_normal[seed_yx[:, 0], seed_yx[:, 1]].copy()
    centers_n[~centers_n_valid] = 0.0

    lab64 = frame.color_lab.astype(np.float64)
    labels = np.full((h, w), INVALID_LABEL, dtype=np.int32)
    best_d = np.empty((h, w), dtype=np.float64)
    for _ in range(params.iterations):
        labels.fill(INVALID_LABEL)
        best_d.fill(np.inf)
        _kernels.slic_assign(
            lab64, frame.normal_map, frame.valid_normal, valid,
            centers_yx, centers_lab, centers_n, centers_n_valid,
            step, params.alpha, params.beta, labels, best_d,
        )
        counts, centers_lab_new, yx_new, n_mean, n_valid_new = _update_centers(frame, labels, K)
        nz = counts > 0
        centers_lab[nz] = centers_lab_new[nz]
        centers_yx[nz] = yx_new[nz]
        centers_n[nz] = n_mean[nz]
        centers_n_valid[nz] = n_valid_new[nz]

    _fill_unassigned(labels, valid)
    min_size = max(1, int(step * step / 4))
    labels = enforce_connectivity(labels, min_size=min_size)
    return FrameSegmentation(labels=labels, segments=build_aggregates(frame, labels))
