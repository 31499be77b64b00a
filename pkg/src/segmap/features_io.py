"""Deep-feature packet ingest and per-pixel entropy.

Packets carry the per-frame output of an offline segmentation network:
a feature map (penultimate-layer activations, 64 channels) and the
softmax class-probability map. File format ``.featpack``:

    magic "FPK1"
    H, W, S, N as little-endian uint32
    feature_map  H*W*S little-endian float32, row-major
    prob_map     H*W*N little-endian float32, row-major
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAGIC = b"FPK1"
FEATURE_DIM = 64
PROB_SUM_TOL = 1e-3


class PacketError(ValueError):
    """Raised when a feature packet is missing, malformed, or inconsistent."""


@dataclass
class FeaturePacket:
    """Deep features and class probabilities for one frame.

    feature_map: (H, W, S) float32
    prob_map:    (H, W, N) float32, rows sum to 1
    """

    feature_map: np.ndarray
    prob_map: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.prob_map.shape[2]

    @property
    def feature_dim(self) -> int:
        return self.feature_map.shape[2]


def save_packet(path: str, packet: FeaturePacket):
    h, w, s = packet.feature_map.shape
    n = packet.prob_map.shape[2]
    header = np.array([h, w, s, n], dtype="<u4")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(header.tobytes())
        f.write(np.ascontiguousarray(packet.feature_map, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(packet.prob_map, dtype="<f4").tobytes())


def load_packet(path: str, t: int, expected_shape=None) -> FeaturePacket:
    """Load and validate a .featpack file for frame ``t``.

    Probabilities within 1e-3 of summing to 1 are renormalized; anything
    worse is rejected. ``expected_shape`` is an optional (H, W) check.
    """
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise PacketError(f"frame {t}: cannot read feature packet {path}: {e}") from e
    if len(raw) < 20 or raw[:4] != MAGIC:
        raise PacketError(f"frame {t}: {path} is not a FPK1 packet")
    h, w, s, n = np.frombuffer(raw[4:20], dtype="<u4")
    h, w, s, n = int(h), int(w), int(s), int(n)
    expected_bytes = 20 + 4 * h * w * (s + n)
    if len(raw) != expected_bytes:
        raise PacketError(
            f"frame {t}: packet size {len(raw)} != expected {expected_bytes} for "
            f"H={h} W={w} S={s} N={n}"
        )
    if s != FEATURE_DIM:
        raise PacketError(f"frame {t}: feature dim {s} != {FEATURE_DIM}")
    if expected_shape is not None and (h, w) != tuple(expected_shape):
        raise PacketError(
            f"frame {t}: packet resolution {h}x{w} != frame {expected_shape[0]}x{expected_shape[1]}"
        )
    feat = np.frombuffer(raw, dtype="<f4", count=h * w * s, offset=20).reshape(h, w, s)
    prob = np.frombuffer(raw, dtype="<f4", count=h * w * n, offset=20 + 4 * h * w * s)
    prob = prob.reshape(h, w, n).astype(np.float64)
    if not np.isfinite(feat).all() or not np.isfinite(prob).all():
        raise PacketError(f"frame {t}: packet contains non-finite values")
    if np.any(prob < 0):
        raise PacketError(f"frame {t}: negative probabilities")
    sums = prob.sum(axis=2)
    if np.abs(sums - 1.0).max() > PROB_SUM_TOL:
        worst = float(np.abs(sums - 1.0).max())
        raise PacketError(f"frame {t}: probability rows deviate from 1 by {worst:.2e}")
    prob = prob / sums[..., None]
    return FeaturePacket(feature_map=feat.astype(np.float32), prob_map=prob.astype(np.float32))


def compute_entropy(prob_map: np.ndarray) -> np.ndarray:
    """Per-pixel Shannon entropy (natural log) of a (..., N) probability map.

    0 log 0 is taken as 0; the result lies in [0, log N].
    """
    p = np.asarray(prob_map, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    e = -terms.sum(axis=-1)
    return np.maximum(e, 0.0)
