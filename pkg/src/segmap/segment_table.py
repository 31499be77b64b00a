"""Per-segment fused feature store.

Each map segment keeps one geometric feature (75-D, from orthographic
projection histograms in a PCA local reference frame), one deep feature
(64-D, incrementally averaged per pixel), and a running mean entropy.
Counters track how many observations each channel has absorbed; stored
feature vectors are L2-normalized after every update.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels

GEO_DIM = 75
CNN_DIM = 64
GOOD_BINS = 5
MIN_LRF_VERTICES = 10
DEGENERATE_EIGENVALUE = 1e-10


class DegenerateGeometryError(ValueError):
    """Segment geometry cannot support an LRF (too few or rank-deficient points)."""


@dataclass
class LRF:
    """Local reference frame: origin, orthonormal axes (columns), eigenvalues."""

    origin: np.ndarray
    axes: np.ndarray          # 3x3, det +1, columns sorted by descending eigenvalue
    eigenvalues: np.ndarray   # descending, nonnegative


def estimate_lrf(vertices: np.ndarray) -> LRF:
    """PCA local reference frame of a vertex set.

    Covariance C = (1/|U|) sum (v-o)(v-o)^T is eigendecomposed; the two
    dominant axes are flipped so most projections are positive and the
    third is their cross product. Raises DegenerateGeometryError for
    fewer than MIN_LRF_VERTICES points or a rank-deficient covariance.
    """
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if v.shape[0] < MIN_LRF_VERTICES:
        raise DegenerateGeometryError(f"need >= {MIN_LRF_VERTICES} vertices, got {v.shape[0]}")
    origin = v.mean(axis=0)
    q = v - origin
    cov = (q.T @ q) / v.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    evals = np.maximum(evals[::-1], 0.0)
    evecs = evecs[:, ::-1]
    if evals[1] < DEGENERATE_EIGENVALUE:
        raise DegenerateGeometryError("rank-deficient covariance")
    axes = np.empty((3, 3))
    for k in range(2):
        proj = q @ evecs[:, k]
        pos = int((proj > 0).sum())
        neg = int((proj < 0).sum())
        flip = neg > pos or (neg == pos and proj.sum() < 0)
        axes[:, k] = -evecs[:, k] if flip else evecs[:, k]
    axes[:, 2] = np.cross(axes[:, 0], axes[:, 1])
    return LRF(origin=origin, axes=axes, eigenvalues=evals)


def good_descriptor(vertices: np.ndarray, lrf: LRF, bins: int = GOOD_BINS) -> np.ndarray:
    """Orthographic-projection histogram descriptor (3 * bins^2 dims).

    Vertices are expressed in the LRF, orthographically projected onto
    its yz, xz, and xy planes, and histogrammed on a bins x bins grid
    over the shared bounding square [-m, m]^2 where m is the largest
    absolute LRF coordinate. Each plane histogram is normalized to sum 1
    and the three are concatenated in yz, xz, xy order.
    """
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    local = (v - lrf.origin) @ lrf.axes
    m = np.abs(local).max()
    if not (m > 0):
        raise DegenerateGeometryError("all vertices coincide with the LRF origin")
    idx = np.floor((local + m) / (2.0 * m) * bins).astype(np.int64)
    np.clip(idx, 0, bins - 1, out=idx)
    out = np.empty(3 * bins * bins)
    # plane order: yz (drop x), xz (drop y), xy (drop z)
    for p, (r, c) in enumerate(((1, 2), (0, 2), (0, 1))):
        flat = idx[:, r] * bins + idx[:, c]
        hist = np.bincount(flat, minlength=bins * bins).astype(np.float64)
        out[p * bins * bins:(p + 1) * bins * bins] = hist / hist.sum()
    return out


@dataclass
class SegmentRecord:
    """Fused features and counters for one map segment."""

    label: int
    f_geo: np.ndarray = field(default_factory=lambda: np.zeros(GEO_DIM))
    f_cnn: np.ndarray = field(default_factory=lambda: np.zeros(CNN_DIM))
    entropy: float = 0.0
    geo_count: int = 0
    cnn_count: int = 0
    surfel_count: int = 0

    def copy(self) -> "SegmentRecord":
        return SegmentRecord(self.label, self.f_geo.copy(), self.f_cnn.copy(),
                             self.entropy, self.geo_count, self.cnn_count,
                             self.surfel_count)


def update_geo(record: SegmentRecord, feat: np.ndarray):
    """Blend one frame-level geometric feature into the record.

    f <- normalize((count * f + feat) / (count + 1)); a zero blend keeps
    the previous f. The counter increments either way.
    """
    feat = np.asarray(feat, dtype=np.float64)
    if not np.isfinite(feat).all():
        raise ValueError("geometric feature contains non-finite values")
    blended = (record.geo_count * record.f_geo + feat) / (record.geo_count + 1)
    nrm = np.linalg.norm(blended)
    if nrm > 0:
        record.f_geo = blended / nrm
    record.geo_count += 1


def update_cnn(record: SegmentRecord, feats: np.ndarray):
    """Sequential per-pixel deep-feature blend (increments the counter per pixel)."""
    feats = np.asarray(feats, dtype=np.float64).reshape(-1, CNN_DIM)
    for f in feats:
        blended = (record.cnn_count * record.f_cnn + f) / (record.cnn_count + 1)
        nrm = np.linalg.norm(blended)
        if nrm > 0:
            record.f_cnn = blended / nrm
        record.cnn_count += 1


def update_entropy(record: SegmentRecord, entropies: np.ndarray):
    """Sequential per-pixel entropy average (increments the counter per pixel)."""
    for e in np.asarray(entropies, dtype=np.float64).reshape(-1):
        record.entropy = (record.cnn_count * record.entropy + float(e)) / (record.cnn_count + 1)
        record.cnn_count += 1


def update_deep(record: SegmentRecord, feats: np.ndarray, entropies: np.ndarray):
    """Fused per-pixel deep-feature and entropy update with one shared counter.

    Both channels see the same pre-increment counter at each pixel and
    the counter advances once per pixel. This is the per-frame path; the
    standalone update_cnn/update_entropy each advance the counter
    themselves.
    """
    feats = np.ascontiguousarray(feats, dtype=np.float64).reshape(-1, CNN_DIM)
    ents = np.ascontiguousarray(entropies, dtype=np.float64).reshape(-1)
    if feats.shape[0] != ents.shape[0]:
        raise ValueError("feature and entropy pixel counts differ")
    if feats.shape[0] == 0:
        return
    e, gamma = _kernels.blend_deep_entropy(record.f_cnn, record.entropy,
                                           record.cnn_count, feats, ents)
    record.entropy = float(e)
    record.cnn_count = int(gamma)


def merge_records(a: SegmentRecord, b: SegmentRecord, label: int | None = None) -> SegmentRecord:
    """Counter-weighted merge of two records (label defaults to a's)."""
    out = SegmentRecord(label=a.label if label is None else label)
    out.geo_count = a.geo_count + b.geo_count
    if out.geo_count > 0:
        blended = a.geo_count * a.f_geo + b.geo_count * b.f_geo
        nrm = np.linalg.norm(blended)
        out.f_geo = blended / nrm if nrm > 0 else np.zeros(GEO_DIM)
    out.cnn_count = a.cnn_count + b.cnn_count
    if out.cnn_count > 0:
        blended = a.cnn_count * a.f_cnn + b.cnn_count * b.f_cnn
        nrm = np.linalg.norm(blended)
        out.f_cnn = blended / nrm if nrm > 0 else np.zeros(CNN_DIM)
        out.entropy = (a.cnn_count * a.entropy + b.cnn_count * b.entropy) / out.cnn_count
    out.surfel_count = a.surfel_count + b.surfel_count
    return out


class SegmentTable:
    """Label -> SegmentRecord store with merge support and byte accounting."""

    def __init__(self):
        self.records: dict[int, SegmentRecord] = {}

    def __len__(self):
        return len(self.records)

    def __contains__(self, label):
        return label in self.records

    def get_or_create(self, label: int) -> SegmentRecord:
        rec = self.records.get(label)
        if rec is None:
            rec = SegmentRecord(label=label)
            self.records[label] = rec
        return rec

    def merge(self, winner: int, loser: int):
        """Fold the loser record into the winner; loser is removed."""
        if loser not in self.records:
            return
        lrec = self.records.pop(loser)
        if winner not in self.records:
            lrec.label = winner
            self.records[winner] = lrec
            return
        self.records[winner] = merge_records(self.records[winner], lrec, label=winner)

    def drop(self, label: int):
        self.records.pop(label, None)

    def labels(self):
        return sorted(self.records)

    def feature_store_bytes(self) -> int:
        """Bytes of the segment-level store schema: N_l * (S+G+1) f32 + counters."""
        n = len(self.records)
        return n * ((CNN_DIM + GEO_DIM + 1) * 4 + 2 * 8)

    def snapshot(self) -> dict[int, SegmentRecord]:
        return {l: r.copy() for l, r in self.records.items()}

    def dump_csv(self, path: str):
        """One row per segment: label, counters, entropy, then geo+cnn scalars."""
        with open(path, "w") as f:
            geo_cols = ",".join(f"g{i}" for i in range(GEO_DIM))
            cnn_cols = ",".join(f"c{i}" for i in range(CNN_DIM))
            f.write(f"label,geo_count,cnn_count,entropy,{geo_cols},{cnn_cols}\n")
            for label in self.labels():
                r = self.records[label]
                vals = [str(label), str(r.geo_count), str(r.cnn_count), repr(float(r.entropy))]
                vals += [repr(float(x)) for x in r.f_geo]
                vals += [repr(float(x)) for x in r.f_cnn]
                f.write(",".join(vals) + "\n")

    def save(self, path: str):
        """Binary checkpoint (npz) for resuming offline analysis."""
        labels = self.labels()
        np.savez_compressed(
            path,
            labels=np.array(labels, dtype=np.int64),
            f_geo=np.stack([self.records[l].f_geo for l in labels]) if labels else np.zeros((0, GEO_DIM)),
            f_cnn=np.stack([self.records[l].f_cnn for l in labels]) if labels else np.zeros((0, CNN_DIM)),
            entropy=np.array([self.records[l].entropy for l in labels]),
            geo_count=np.array([self.records[l].geo_count for l in labels], dtype=np.int64),
            cnn_count=np.array([self.records[l].cnn_count for l in labels], dtype=np.int64),
            surfel_count=np.array([self.records[l].surfel_count for l in labels], dtype=np.int64),
        )

    @classmethod
    def load(cls, path: str) -> "SegmentTable":
        data = np.load(path)
        table = cls()
        for i, label in enumerate(data["labels"]):
            table.records[int(label)] = SegmentRecord(
                label=int(label),
                f_geo=data["f_geo"][i].copy(),
                f_cnn=data["f_cnn"][i].copy(),
                entropy=float(data["entropy"][i]),
                geo_count=int(data["geo_count"][i]),
                cnn_count=int(data["cnn_count"][i]),
                surfel_count=int(data["surfel_count"][i]),
            )
        return table


def element_baseline_bytes(num_surfels: int) -> int:
    """Bytes an element-level store would need: N_s * (S+G+1) f32."""
    return num_surfels * (CNN_DIM + GEO_DIM + 1) * 4
