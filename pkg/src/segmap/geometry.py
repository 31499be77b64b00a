"""Camera model, RGBD frame container, and per-frame geometry maps.

Conventions used throughout the package:

- Camera frame: x right, y down, z forward (pinhole looking along +z).
- World frame: the frame of the camera-to-world poses; for sequences
  starting at identity it coincides with the first camera frame.
- Missing depth is encoded as 0 in depth maps and propagates as NaN
  through vertex and normal maps. Downstream code treats NaN as invalid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np

# Axial noise polynomial of a structured-light RGBD sensor (meters).
AXIAL_NOISE_BASE = 0.0012
AXIAL_NOISE_QUAD = 0.0019
AXIAL_NOISE_Z0 = 0.4


def axial_noise_sigma(z):
    """Axial depth noise stddev (meters) at depth ``z`` (meters).

    Quadratic sensor noise model: sigma(z) = 0.0012 + 0.0019 (z - 0.4)^2.
    Accepts scalars or arrays.
    """
    return AXIAL_NOISE_BASE + AXIAL_NOISE_QUAD * (np.asarray(z) - AXIAL_NOISE_Z0) ** 2


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera intrinsics in pixel units."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def scaled(self, width: int, height: int) -> "Intrinsics":
        """Intrinsics for the same camera at a different image resolution."""
        sx = width / self.width
        sy = height / self.height
        return Intrinsics(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height)


ROTATION_TOL = 1e-6


@dataclass(frozen=True)
class Pose:
    """Rigid camera-to-world transform: p_world = R @ p_cam + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        if np.abs(R @ R.T - np.eye(3)).max() > ROTATION_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ROTATION_TOL:
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def matrix34(self) -> np.ndarray:
        return np.hstack([self.rotation, self.translation.reshape(3, 1)])


def compute_vertex_map(depth: np.ndarray, intr: Intrinsics) -> np.ndarray:
    """Back-project a depth map into a camera-frame vertex map.

    v(u) = depth(u) * K^-1 (x, y, 1); pixels with depth == 0 become NaN.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (intr.height, intr.width):
        raise ValueError(
            f"depth shape {depth.shape} does not match intrinsics {intr.height}x{intr.width}"
        )
    if np.any(depth < 0):
        raise ValueError("depth must be nonnegative")
    xs = np.arange(intr.width, dtype=np.float64)
    ys = np.arange(intr.height, dtype=np.float64)
    u, v = np.meshgrid(xs, ys)
    z = depth.copy()
    z[z == 0] = np.nan
    out = np.empty((intr.height, intr.width, 3), dtype=np.float64)
    out[..., 0] = (u - intr.cx) / intr.fx * z
    out[..., 1] = (v - intr.cy) / intr.fy * z
    out[..., 2] = z
    return out


DEGENERATE_CROSS_NORM = 1e-9
DEPTH_EDGE_FRACTION = 0.05    # relative depth jump that invalidates a normal
NORMAL_SMOOTH_RADIUS = 2      # box window when the frame is measurably noisy
DEPTH_NOISE_SMOOTH_GATE = 2e-3  # meters of robust depth noise that trigger smoothing


def estimate_depth_noise(depth_z: np.ndarray) -> float:
    """Robust per-frame depth noise (meters): scaled MAD of 3x3-median residuals."""
    z = np.asarray(depth_z, dtype=np.float32)
    valid = np.isfinite(z) & (z > 0)
    if valid.sum() < 16:
        return 0.0
    med = cv2.medianBlur(np.where(valid, z, 0.0), 3)
    ok = valid & (cv2.erode(valid.astype(np.uint8), np.ones((3, 3), np.uint8)) > 0)
    resid = (z - med)[ok]
    if resid.size == 0:
        return 0.0
    return float(1.4826 * np.median(np.abs(resid)))


def compute_normal_map(vertex_map: np.ndarray,
                       smooth_radius: int | None = None) -> np.ndarray:
    """Normals from central differences of the vertex map, camera facing.

    n(u) = normalize(cross(v(x+1,y) - v(x-1,y), v(x,y+1) - v(x,y-1))),
    flipped so n . v <= 0. Border pixels and pixels with any invalid
    neighbor are NaN, as are degenerate cross products and pixels whose
    differences straddle a depth discontinuity (central differences
    across an occlusion edge produce directions unrelated to either
    surface).

    ``smooth_radius=None`` picks the estimator variant per frame: when
    the measured depth noise exceeds DEPTH_NOISE_SMOOTH_GATE the raw
    normals are box-averaged (radius NORMAL_SMOOTH_RADIUS) and
    re-normalized; clean frames keep the crease-sharp raw estimate.
    """
    vm = np.asarray(vertex_map, dtype=np.float64)
    h, w = vm.shape[:2]
    normals = np.full_like(vm, np.nan)
    if h < 3 or w < 3:
        return normals
    dx = vm[1:-1, 2:] - vm[1:-1, :-2]
    dy = vm[2:, 1:-1] - vm[:-2, 1:-1]
    n = np.cross(dx, dy)
    norm = np.linalg.norm(n, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        n /= norm[..., None]
    n[~(norm > DEGENERATE_CROSS_NORM)] = np.nan
    center = vm[1:-1, 1:-1]
    z = center[..., 2]
    with np.errstate(invalid="ignore"):
        edge = (np.abs(dx[..., 2]) > DEPTH_EDGE_FRACTION * z) \
             | (np.abs(dy[..., 2]) > DEPTH_EDGE_FRACTION * z)
    n[edge] = np.nan
    # orient toward the camera
    dot = np.einsum("ijk,ijk->ij", n, center)
    n[dot > 0] *= -1.0
    normals[1:-1, 1:-1] = n
    if smooth_radius is None:
        noisy = estimate_depth_noise(vm[..., 2]) > DEPTH_NOISE_SMOOTH_GATE
        smooth_radius = NORMAL_SMOOTH_RADIUS if noisy else 0
    if smooth_radius > 0:
        normals = _smooth_normals(normals, smooth_radius)
    return normals


def _smooth_normals(normals: np.ndarray, radius: int) -> np.ndarray:
    """Average valid unit normals in a box window; invalid pixels stay NaN."""
    valid = np.isfinite(normals).all(axis=-1)
    filled = np.where(valid[..., None], normals, 0.0)
    k = 2 * radius + 1
    summed = cv2.boxFilter(filled.astype(np.float32), ddepth=-1, ksize=(k, k),
                           normalize=False, borderType=cv2.BORDER_CONSTANT)
    summed = summed.astype(np.float64)
    length = np.linalg.norm(summed, axis=-1)
    out = np.full_like(normals, np.nan)
    good = valid & (length > DEGENERATE_CROSS_NORM)
    out[good] = summed[good] / length[good, None]
    return out


def transform_points(points: np.ndarray, pose: Pose) -> np.ndarray:
    """Apply R p + t to an (..., 3) array of points."""
    return np.asarray(points) @ pose.rotation.T + pose.translation


def transform_directions(dirs: np.ndarray, pose: Pose) -> np.ndarray:
    """Apply R d (rotation only) to an (..., 3) array of directions/normals."""
    return np.asarray(dirs) @ pose.rotation.T


def project(points_cam: np.ndarray, intr: Intrinsics):
    """Project camera-frame points to pixel coordinates.

    Returns (u, v, z) float arrays; callers gate on z > 0 and bounds.
    """
    p = np.asarray(points_cam, dtype=np.float64)
    z = p[..., 2]
    with np.errstate(invalid="ignore", divide="ignore"):
        u = intr.fx * p[..., 0] / z + intr.cx
        v = intr.fy * p[..., 1] / z + intr.cy
    return u, v, z


def rgb_to_lab(color_rgb: np.ndarray) -> np.ndarray:
    """Convert 8-bit (or [0,1] float) RGB to CIELAB (D65), L in [0, 100]."""
    img = np.asarray(color_rgb)
    if img.dtype == np.uint8:
        img = img.astype(np.float32) / 255.0
    else:
        img = img.astype(np.float32)
    return cv2.cvtColor(img, cv2.COLOR_RGB2Lab)


@dataclass
class Frame:
    """One RGBD observation with derived per-pixel maps.

    color_lab : (H, W, 3) float32 CIELAB
    depth     : (H, W) float32 meters, 0 = missing
    vertex_map: (H, W, 3) float64 camera-frame meters, NaN where invalid
    normal_map: (H, W, 3) float64 unit vectors, NaN where invalid
    """

    color_lab: np.ndarray
    depth: np.ndarray
    vertex_map: np.ndarray
    normal_map: np.ndarray
    intrinsics: Intrinsics
    pose: Pose
    timestamp: int = 0
    valid_depth: np.ndarray = field(init=False)
    valid_normal: np.ndarray = field(init=False)

    def __post_init__(self):
        h, w = self.depth.shape
        for name in ("color_lab", "vertex_map", "normal_map"):
            if getattr(self, name).shape[:2] != (h, w):
                raise ValueError(f"{name} shape does not match depth map {h}x{w}")
        self.valid_depth = self.depth > 0
        self.valid_normal = np.isfinite(self.normal_map).all(axis=-1)

    @property
    def shape(self):
        return self.depth.shape


def make_frame(color_rgb: np.ndarray, depth_m: np.ndarray, intr: Intrinsics,
               pose: Pose, timestamp: int = 0) -> Frame:
    """Build a Frame from raw color/depth, deriving lab/vertex/normal maps."""
    depth = np.asarray(depth_m, dtype=np.float32)
    vm = compute_vertex_map(depth, intr)
    nm = compute_normal_map(vm)
    return Frame(
        color_lab=rgb_to_lab(color_rgb),
        depth=depth,
        vertex_map=vm,
        normal_map=nm,
        intrinsics=intr,
        pose=pose,
        timestamp=timestamp,
    )
