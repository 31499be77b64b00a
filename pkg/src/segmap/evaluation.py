"""IoU evaluation of discovered clusters against ground-truth classes.

Clusters carry no names, so each cluster is first mapped to the
ground-truth class holding the plurality of its pixels (many clusters
may map to one class); IoU is then accumulated per class over all
evaluated frames before the division (micro-averaged), with a per-frame
macro-averaged variant behind a flag.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clustering import ClusterMap
from .geometry import Intrinsics, Pose
from .sequence_io import SequenceReader
from .surfels import UNLABELED, SurfelMap, render_segment_map

VOID = -1


def render_prediction(smap: SurfelMap, clusters: ClusterMap, pose: Pose,
                      intr: Intrinsics) -> np.ndarray:
    """Z-buffered render of cluster ids; VOID where nothing projects."""
    rendered = render_segment_map(smap, pose, intr)
    out = np.full(rendered.labels.shape, VOID, dtype=np.int64)
    if not clusters.assignment:
        return out
    max_label = max(clusters.assignment)
    lut = np.full(max_label + 2, VOID, dtype=np.int64)
    for label, cid in clusters.assignment.items():
        lut[label] = cid
    hit = (rendered.labels >= 0) & (rendered.labels <= max_label)
    out[hit] = lut[rendered.labels[hit]]
    return out


def render_segment_image(smap: SurfelMap, pose: Pose, intr: Intrinsics) -> np.ndarray:
    return render_segment_map(smap, pose, intr).labels


def assign_clusters_to_classes(pred_images, gt_images) -> dict:
    """Map each cluster id to the GT class holding the plurality of its pixels.

    Accepts single images or equal-length lists. Clusters overlapping no
    labeled pixel map to VOID. Ties break toward the smaller class id.
    """
    if isinstance(pred_images, np.ndarray):
        pred_images = [pred_images]
        gt_images = [gt_images]
    counts: dict[int, dict[int, int]] = {}
    for pred, gt in zip(pred_images, gt_images):
        if pred.shape != gt.shape:
            raise ValueError("prediction and ground truth sizes differ")
        sel = (pred != VOID) & (gt >= 0)
        if not sel.any():
            continue
        p = pred[sel].astype(np.int64)
        g = gt[sel].astype(np.int64)
        key = p * (g.max() + 1) + g
        uniq, c = np.unique(key, return_counts=True)
        base = g.max() + 1
        for k, n in zip(uniq, c):
            cid, cls = int(k // base), int(k % base)
            counts.setdefault(cid, {})
            counts[cid][cls] = counts[cid].get(cls, 0) + int(n)
    mapping = {}
    for cid, hist in counts.items():
        best = sorted(hist.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]
        mapping[cid] = best
    return mapping


def apply_mapping(pred: np.ndarray, mapping: dict) -> np.ndarray:
    out = np.full(pred.shape, VOID, dtype=np.int64)
    for cid, cls in mapping.items():
        out[pred == cid] = cls
    return out


def compute_iou(mapped_preds, gts, num_classes: int, macro: bool = False):
    """Per-class IoU over one or more frames.

    Micro mode accumulates intersections and unions across frames before
    dividing; macro averages per-frame IoUs. Classes absent from both
    prediction and ground truth are excluded (None in the result).
    """
    if isinstance(mapped_preds, np.ndarray):
        mapped_preds = [mapped_preds]
        gts = [gts]
    if macro:
        per_frame = [compute_iou(p, g, num_classes, macro=False)[0]
                     for p, g in zip(mapped_preds, gts)]
        out = []
        for c in range(num_classes):
            vals = [f[c] for f in per_frame if f[c] is not None]
            out.append(float(np.mean(vals)) if vals else None)
    else:
        inter = np.zeros(num_classes, dtype=np.int64)
        union = np.zeros(num_classes, dtype=np.int64)
        for pred, gt in zip(mapped_preds, gts):
            for c in range(num_classes):
                p = pred == c
                g = gt == c
                inter[c] += np.count_nonzero(p & g)
                union[c] += np.count_nonzero(p | g)
        out = [float(inter[c] / union[c]) if union[c] > 0 else None
               for c in range(num_classes)]
    vals = [v for v in out if v is not None]
    mean = float(np.mean(vals)) if vals else 0.0
    return out, mean


@dataclass
class EvalReport:
    per_class_iou: list
    mean_iou: float
    cluster_to_class: dict
    num_classes: int
    macro: bool = False
    segment_class_majority: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "per_class_iou": self.per_class_iou,
            "mean_iou": self.mean_iou,
            "cluster_to_class": {str(k): v for k, v in sorted(self.cluster_to_class.items())},
            "num_classes": self.num_classes,
            "macro": self.macro,
        }


def segment_class_counts(smap: SurfelMap, seq: SequenceReader) -> dict:
    """Per map-segment histogram of GT classes over all frames (rendered)."""
    counts: dict[int, dict[int, int]] = {}
    for i in range(len(seq)):
        gt = seq.load_gt_labels(i)
        seg = render_segment_image(smap, seq.poses[i], seq.intrinsics)
        sel = (seg != UNLABELED) & (gt >= 0)
        if not sel.any():
            continue
        s = seg[sel].astype(np.int64)
        g = gt[sel].astype(np.int64)
        base = g.max() + 1
        uniq, c = np.unique(s * base + g, return_counts=True)
        for k, n in zip(uniq, c):
            label, cls = int(k // base), int(k % base)
            counts.setdefault(label, {})
            counts[label][cls] = counts[label].get(cls, 0) + int(n)
    return counts


def majority_class(counts: dict) -> dict:
    """Per-segment plurality GT class from segment_class_counts output."""
    return {label: sorted(hist.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]
            for label, hist in counts.items() if hist}


def _segments_to_clusters(seg_img: np.ndarray, clusters: ClusterMap) -> np.ndarray:
    out = np.full(seg_img.shape, VOID, dtype=np.int64)
    if not clusters.assignment:
        return out
    max_label = max(clusters.assignment)
    lut = np.full(max_label + 2, VOID, dtype=np.int64)
    for label, cid in clusters.assignment.items():
        lut[label] = cid
    hit = (seg_img >= 0) & (seg_img <= max_label)
    out[hit] = lut[seg_img[hit]]
    return out


def evaluate_clusters(smap: SurfelMap, clusters: ClusterMap, seq: SequenceReader,
                      num_classes: int, macro: bool = False) -> EvalReport:
    """Render per-frame cluster predictions and score them against GT labels.

    One segment render per frame feeds both the cluster prediction and
    the per-segment GT class histogram.
    """
    preds = []
    gts = []
    seg_counts: dict[int, dict[int, int]] = {}
    for i in range(len(seq)):
        gt = seq.load_gt_labels(i)
        seg_img = render_segment_image(smap, seq.poses[i], seq.intrinsics)
        preds.append(_segments_to_clusters(seg_img, clusters))
        gts.append(gt)
        sel = (seg_img != UNLABELED) & (gt >= 0)
        if sel.any():
            s = seg_img[sel].astype(np.int64)
            g = gt[sel].astype(np.int64)
            base = g.max() + 1
            uniq, c = np.unique(s * base + g, return_counts=True)
            for k, n in zip(uniq, c):
                label, cls = int(k // base), int(k % base)
                seg_counts.setdefault(label, {})
                seg_counts[label][cls] = seg_counts[label].get(cls, 0) + int(n)
    mapping = assign_clusters_to_classes(preds, gts)
    mapped = [apply_mapping(p, mapping) for p in preds]
    per_class, mean = compute_iou(mapped, gts, num_classes, macro=macro)
    return EvalReport(per_class_iou=per_class, mean_iou=mean,
                      cluster_to_class=mapping, num_classes=num_classes,
                      macro=macro, segment_class_majority=majority_class(seg_counts))
