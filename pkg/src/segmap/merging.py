"""Agglomerative merging of superpixels into object-level 2D segments.

Adjacent superpixels merge when color similarity, point-to-plane
distance, and convexity all pass their thresholds:

    Lambda = ||c_a - c_b||            < sigma_lambda
    Psi    = |(v_b - v_a) . n_a|      < k * sigma_axial(z)
    Phi    = 1 if (v_b - v_a).n_a > 0 else n_a . n_b   > sigma_phi

The Psi/Phi pair is asymmetric in (a, b); a pair merges only when the
criteria hold in both directions. Superpixels without usable geometry
may still merge on color alone under a tightened threshold.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .geometry import axial_noise_sigma
from .slic import FrameSegmentation, Superpixel


@dataclass
class MergeThresholds:
    sigma_lambda: float = 7.0
    sigma_phi: float = 0.8
    noise_multiplier: float = 3.0  # k in sigma_psi = k * sigma_axial(z)


def sigma_psi(depth: float, k: float = 3.0) -> float:
    """Depth-dependent geometric merge gate (meters)."""
    return k * float(axial_noise_sigma(depth))


def merge_predicates(a: Superpixel, b: Superpixel):
    """(Lambda, Psi, Phi) for the ordered pair (a, b).

    Geometry-invalid input yields Psi=inf, Phi=-1 so the pair can never
    merge on geometry.
    """
    lam = float(np.linalg.norm(a.mean_lab - b.mean_lab))
    if not (a.geometry_valid and b.geometry_valid):
        return lam, np.inf, -1.0
    d = b.mean_vertex - a.mean_vertex
    proj = float(d @ a.mean_normal)
    psi = abs(proj)
    phi = 1.0 if proj > 0 else float(a.mean_normal @ b.mean_normal)
    return lam, psi, phi


def pair_qualifies(a: Superpixel, b: Superpixel, th: MergeThresholds):
    """Whether (a, b) may merge; returns (qualifies, Lambda)."""
    lam, psi_ab, phi_ab = merge_predicates(a, b)
    if not (a.geometry_valid and b.geometry_valid):
        # color-only fallback for poor-geometry regions
        return lam < th.sigma_lambda / 2.0, lam
    if lam >= th.sigma_lambda:
        return False, lam
    _, psi_ba, phi_ba = merge_predicates(b, a)
    ok = (psi_ab < sigma_psi(a.mean_depth, th.noise_multiplier)
          and phi_ab > th.sigma_phi
          and psi_ba < sigma_psi(b.mean_depth, th.noise_multiplier)
          and phi_ba > th.sigma_phi)
    return ok, lam


class _Working:
    """Mutable sum-form aggregates so merged means stay exact."""

    __slots__ = ("count", "lab_sum", "vtx_sum", "dep_sum", "yx_sum",
                 "n_wsum", "n_count", "version", "alive")

    def __init__(self, sp: Superpixel):
        c = sp.pixel_count
        self.count = c
        self.lab_sum = sp.mean_lab * c
        self.vtx_sum = sp.mean_vertex * c
        self.dep_sum = sp.mean_depth * c
        self.yx_sum = sp.centroid * c
        # normals weighted by total pixel count of their contributor
        self.n_wsum = sp.mean_normal * c if sp.geometry_valid else np.zeros(3)
        self.n_count = sp.normal_count
        self.version = 0
        self.alive = True

    def snapshot(self, sid: int) -> Superpixel:
        c = self.count
        n_len = np.linalg.norm(self.n_wsum)
        geo_ok = self.n_count > 0 and n_len > 1e-9
        return Superpixel(
            id=sid,
            pixel_count=c,
            mean_lab=self.lab_sum / c,
            mean_vertex=self.vtx_sum / c,
            mean_normal=self.n_wsum / n_len if geo_ok else np.zeros(3),
            centroid=self.yx_sum / c,
            mean_depth=self.dep_sum / c,
            normal_count=self.n_count,
            geometry_valid=bool(geo_ok),
        )

    def absorb(self, other: "_Working"):
        self.count += other.count
        self.lab_sum += other.lab_sum
        self.vtx_sum += other.vtx_sum
        self.dep_sum += other.dep_sum
        self.yx_sum += other.yx_sum
        self.n_wsum += other.n_wsum
        self.n_count += other.n_count
        self.version += 1
        other.alive = False


def _adjacency(labels: np.ndarray, n: int):
    adj = [set() for _ in range(n)]
    for a, b in ((labels[:, :-1], labels[:, 1:]), (labels[:-1, :], labels[1:, :])):
        m = (a >= 0) & (b >= 0) & (a != b)
        pairs = np.unique(np.stack([a[m], b[m]], axis=1), axis=0) if m.any() else []
        for i, j in pairs:
            adj[i].add(int(j))
            adj[j].add(int(i))
    return adj


def agglomerate(seg: FrameSegmentation, thresholds: MergeThresholds | None = None) -> FrameSegmentation:
    """Greedily merge qualifying adjacent segments, smallest Lambda first.

    Ties break on the (min id, max id) pair so runs are reproducible.
    Merged aggregates are pixel-count-weighted means with the normal
    re-normalized.
    """
    th = thresholds or MergeThresholds()
    n = seg.num_segments
    if n == 0:
        return seg
    work = [_Working(sp) for sp in seg.segments]
    adj = _adjacency(seg.labels, n)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    heap = []

    def push(i, j):
        a, b = (i, j) if i < j else (j, i)
        ok, lam = pair_qualifies(work[a].snapshot(a), work[b].snapshot(b), th)
        if ok:
            heapq.heappush(heap, (lam, a, b, work[a].version, work[b].version))

    for i in range(n):
        for j in sorted(adj[i]):
            if i < j:
                push(i, j)

    while heap:
        lam, a, b, va, vb = heapq.heappop(heap)
        if not (work[a].alive and work[b].alive):
            continue
        if work[a].version != va or work[b].version != vb:
            continue
        # merge the larger id into the smaller
        work[a].absorb(work[b])
        parent[b] = a
        adj[a] |= adj[b]
        adj[a].discard(a)
        adj[a].discard(b)
        for nb in adj[b]:
            if nb != a:
                adj[nb].discard(b)
                adj[nb].add(a)
        adj[b] = set()
        for nb in sorted(adj[a]):
            if work[nb].alive:
                push(a, nb)

    roots = np.array([find(i) for i in range(n)], dtype=np.int64)
    alive_ids = sorted(set(roots.tolist()))
    remap = {r: k for k, r in enumerate(alive_ids)}
    lut = np.array([remap[r] for r in roots], dtype=np.int32)
    labels = seg.labels.copy()
    m = labels >= 0
    labels[m] = lut[labels[m]]
    segments = [work[r].snapshot(remap[r]) for r in alive_ids]
    return FrameSegmentation(labels=labels, segments=segments)
