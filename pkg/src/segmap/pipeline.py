"""Per-frame pipeline: segment, fuse, propagate labels, update features, recluster.

Stage timing follows the six-component breakdown used for profiling:
map building, deep feature extraction (fixture ingest), geometric
feature extraction, entropy computation, feature/entropy update, and
segment clustering. Frame decoding is tracked separately as IO.
"""

from __future__ import annotations

import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .clustering import ClusterMap, MclParams, recluster
from .features_io import PacketError, compute_entropy, load_packet
from .merging import MergeThresholds, agglomerate
from .segment_table import (DegenerateGeometryError, MIN_LRF_VERTICES, SegmentTable,
                            element_baseline_bytes, estimate_lrf, good_descriptor,
                            update_deep, update_geo)
from .sequence_io import SequenceReader
from .slic import SlicParams, run_slic
from .surfels import (AssociationGates, SurfelMap, fuse_frame, propagate_labels,
                      relabel_surfels, render_segment_map)

STAGES = (
    "building_3d_segmentation_map",
    "deep_feature_extraction",
    "geometric_feature_extraction",
    "entropy_computation",
    "feature_entropy_update",
    "segment_clustering",
)

FEATURE_MODES = ("required", "optional", "off")


class PipelineError(RuntimeError):
    """Carries the frame index and stage where a run aborted."""


@dataclass
class PipelineConfig:
    target_superpixels: int = 250
    slic_alpha: float = 110.0
    slic_beta: float = 0.5
    slic_iterations: int = 5
    sigma_lambda: float = 7.0
    sigma_phi: float = 0.8
    noise_multiplier: float = 3.0
    eta: float = 6.0
    mcl_inflation: float = 1.6
    mcl_prune: float = 1e-5
    mcl_max_iters: int = 100
    feature_mode: str = "required"
    propagate_overlap: float = 0.3
    assoc_depth_sigmas: float = 3.0
    assoc_normal_deg: float = 20.0
    recluster_every: int = 1

    def __post_init__(self):
        if self.feature_mode not in FEATURE_MODES:
            raise ValueError(f"feature_mode must be one of {FEATURE_MODES}")
        for name in ("target_superpixels", "slic_alpha", "slic_beta", "slic_iterations",
                     "sigma_lambda", "eta", "mcl_max_iters", "recluster_every",
                     "propagate_overlap", "assoc_depth_sigmas", "assoc_normal_deg"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0 <= self.sigma_phi <= 1):
            raise ValueError("sigma_phi must lie in [0, 1]")
        if self.noise_multiplier < 0 or self.mcl_prune < 0:
            raise ValueError("noise_multiplier and mcl_prune must be nonnegative")
        if self.mcl_inflation <= 1:
            raise ValueError("mcl_inflation must exceed 1")

    def slic_params(self) -> SlicParams:
        return SlicParams(self.target_superpixels, self.slic_alpha,
                          self.slic_beta, self.slic_iterations)

    def merge_thresholds(self) -> MergeThresholds:
        return MergeThresholds(self.sigma_lambda, self.sigma_phi, self.noise_multiplier)

    def mcl_params(self) -> MclParams:
        return MclParams(self.mcl_inflation, self.mcl_prune, self.mcl_max_iters)

    def gates(self) -> AssociationGates:
        return AssociationGates(self.assoc_depth_sigmas, self.assoc_normal_deg)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PipelineResult:
    surfel_map: SurfelMap
    table: SegmentTable
    clusters: ClusterMap
    config: PipelineConfig
    timings_ms: dict = field(default_factory=dict)   # stage -> list per frame
    io_ms: list = field(default_factory=list)
    memory: dict = field(default_factory=dict)       # per-frame byte samples
    num_frames: int = 0
    num_classes: int = 0

    def stage_means_ms(self) -> dict:
        return {s: float(np.mean(v)) if v else 0.0 for s, v in self.timings_ms.items()}

    def total_mean_ms(self) -> float:
        return float(sum(self.stage_means_ms().values()))


class _StageTimer:
    def __init__(self, sink, name, frame):
        self.sink = sink
        self.name = name
        self.frame = frame

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None:
            raise PipelineError(
                f"frame {self.frame}, stage '{self.name}': {exc}"
            ) from exc
        self.sink[self.name].append((time.perf_counter() - self.t0) * 1000.0)


def _group_pixels_by_label(rendered_labels: np.ndarray):
    """Scanline-ordered pixel indices grouped per rendered label."""
    flat = rendered_labels.reshape(-1)
    sel = np.nonzero(flat >= 0)[0]
    if sel.size == 0:
        return {}
    labs = flat[sel]
    order = np.argsort(labs, kind="stable")  # stable keeps scanline order per label
    sel = sel[order]
    labs = labs[order]
    bounds = np.nonzero(np.diff(labs))[0] + 1
    groups = np.split(sel, bounds)
    return {int(labs_group[0]): grp for labs_group, grp in
            zip(np.split(labs, bounds), groups)}


def run_sequence(seq, config: PipelineConfig | None = None,
                 progress: bool = False) -> PipelineResult:
    """Run the full incremental pipeline over a sequence directory or reader."""
    if isinstance(seq, (str, os.PathLike)):
        seq = SequenceReader(os.fspath(seq))
    config = config or PipelineConfig()

    smap = SurfelMap()
    table = SegmentTable()
    clusters = ClusterMap()
    timings = {s: [] for s in STAGES}
    io_ms = []
    memory = {"feature_store_bytes": [], "element_baseline_bytes": [],
              "num_surfels": [], "num_segments": []}
    num_classes = 0

    for i in range(len(seq)):
        t = seq.indices[i]
        t0 = time.perf_counter()
        frame = seq.load_frame(i)
        io_ms.append((time.perf_counter() - t0) * 1000.0)

        packet = None
        if config.feature_mode != "off":
            with _StageTimer(timings, "deep_feature_extraction", t):
                path = seq.feature_path(t)
                if os.path.isfile(path):
                    packet = load_packet(path, t, expected_shape=frame.shape)
                elif config.feature_mode == "required":
                    raise PacketError(f"frame {t}: missing feature packet {path}")
            if packet is not None:
                if num_classes and packet.num_classes != num_classes:
                    raise PipelineError(
                        f"frame {t}: class count changed {num_classes} -> {packet.num_classes}"
                    )
                num_classes = packet.num_classes
        else:
            timings["deep_feature_extraction"].append(0.0)

        with _StageTimer(timings, "building_3d_segmentation_map", t):
            frame_seg = agglomerate(run_slic(frame, config.slic_params()),
                                    config.merge_thresholds())
            fuse = fuse_frame(smap, frame, config.gates())
            rendered = render_segment_map(smap, frame.pose, frame.intrinsics)
            corr = propagate_labels(rendered, frame_seg, config.propagate_overlap)
            relabel = relabel_surfels(smap, corr, frame_seg, fuse.assoc_index)
            for winner, loser in relabel.merges:
                table.merge(winner, loser)
            for label in sorted(relabel.new_labels.values()):
                table.get_or_create(label)
            counts = smap.label_counts()
            for label, rec in list(table.records.items()):
                rec.surfel_count = counts.get(label, 0)
                if rec.surfel_count == 0:
                    table.drop(label)
            # segmentation map as updated this frame: current-frame segments
            # stamp their footprint, surviving renders keep merged labels
            updated_labels = rendered.labels.copy()
            if relabel.merges:
                redirect = {}
                for w_, l_ in relabel.merges:
                    redirect[l_] = w_
                def _resolve(l):
                    while l in redirect:
                        l = redirect[l]
                    return l
                pos = updated_labels >= 0
                uniq = np.unique(updated_labels[pos])
                lut = {int(l): _resolve(int(l)) for l in uniq}
                updated_labels[pos] = np.vectorize(lut.get)(updated_labels[pos])
            fs_valid = frame_seg.labels >= 0
            updated_labels[fs_valid] = relabel.frame_to_map[frame_seg.labels[fs_valid]]

        with _StageTimer(timings, "geometric_feature_extraction", t):
            groups = _group_pixels_by_label(updated_labels)
            valid_flat = frame.valid_depth.reshape(-1)
            vtx_flat = frame.vertex_map.reshape(-1, 3)
            geo_feats = {}
            for label in sorted(groups):
                if label not in table.records:
                    continue
                pix = groups[label]
                pix = pix[valid_flat[pix]]
                if pix.size < MIN_LRF_VERTICES:
                    continue
                verts = vtx_flat[pix]
                try:
                    lrf = estimate_lrf(verts)
                    geo_feats[label] = good_descriptor(verts, lrf)
                except DegenerateGeometryError:
                    continue

        entropy_map = None
        if packet is not None:
            with _StageTimer(timings, "entropy_computation", t):
                entropy_map = compute_entropy(packet.prob_map)
        else:
            timings["entropy_computation"].append(0.0)

        with _StageTimer(timings, "feature_entropy_update", t):
            for label in sorted(geo_feats):
                update_geo(table.records[label], geo_feats[label])
            if packet is not None:
                feat_flat = packet.feature_map.reshape(-1, packet.feature_dim)
                ent_flat = entropy_map.reshape(-1)
                for label in sorted(groups):
                    if label not in table.records:
                        continue
                    pix = groups[label]
                    update_deep(table.records[label], feat_flat[pix], ent_flat[pix])

        with _StageTimer(timings, "segment_clustering", t):
            if (i + 1) % config.recluster_every == 0 or i == len(seq) - 1:
                clusters = recluster(table.records, max(num_classes, 2),
                                     eta=config.eta, params=config.mcl_params())

        memory["feature_store_bytes"].append(table.feature_store_bytes())
        memory["element_baseline_bytes"].append(element_baseline_bytes(len(smap)))
        memory["num_surfels"].append(len(smap))
        memory["num_segments"].append(len(table))
        if progress:
            print(f"frame {t}: surfels={len(smap)} segments={len(table)} "
                  f"clusters={clusters.num_clusters}")

    return PipelineResult(
        surfel_map=smap, table=table, clusters=clusters, config=config,
        timings_ms=timings, io_ms=io_ms, memory=memory,
        num_frames=len(seq), num_classes=max(num_classes, 2),
    )


def build_report(result: PipelineResult, profile: bool = False) -> dict:
    """Reproducible run summary; wall-clock timing only with ``profile``.

    Without profiling the report depends only on the inputs, so repeated
    runs serialize byte-identically.
    """
    mem = result.memory
    feature_bytes = mem["feature_store_bytes"][-1] if mem["feature_store_bytes"] else 0
    baseline_bytes = mem["element_baseline_bytes"][-1] if mem["element_baseline_bytes"] else 0
    report = {
        "config": result.config.to_dict(),
        "num_frames": result.num_frames,
        "num_classes": result.num_classes,
        "map": {
            "num_surfels": len(result.surfel_map),
            "num_segments": len(result.table),
            "num_clusters": result.clusters.num_clusters,
        },
        "memory": {
            "feature_store_bytes": feature_bytes,
            "element_baseline_bytes": baseline_bytes,
            "element_to_segment_ratio": (baseline_bytes / feature_bytes
                                         if feature_bytes else 0.0),
            "peak_feature_store_bytes": max(mem["feature_store_bytes"], default=0),
            "per_frame_feature_store_bytes": mem["feature_store_bytes"],
            "per_frame_num_surfels": mem["num_surfels"],
            "per_frame_num_segments": mem["num_segments"],
        },
        "clusters": {str(k): v for k, v in sorted(result.clusters.assignment.items())},
    }
    if profile:
        report["timing_ms"] = {
            "stages_mean": result.stage_means_ms(),
            "total_mean": result.total_mean_ms(),
            "frame_io_mean": float(np.mean(result.io_ms)) if result.io_ms else 0.0,
            "stages_per_frame": result.timings_ms,
        }
    return report
