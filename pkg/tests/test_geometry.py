import numpy as np
import pytest

from segmap.geometry import (Intrinsics, Pose, axial_noise_sigma, compute_normal_map,
                             compute_vertex_map, make_frame, project, rgb_to_lab,
                             transform_directions, transform_points)

from conftest import make_intrinsics


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        Intrinsics(-1, 60, 32, 24, 64, 48)
    with pytest.raises(ValueError):
        Intrinsics(60, 60, 100, 24, 64, 48)  # cx outside image
    Intrinsics(60, 60, 31.5, 23.5, 64, 48)


def test_pose_validation():
    with pytest.raises(ValueError):
        Pose(np.eye(3) * 2, np.zeros(3))
    with pytest.raises(ValueError):
        Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))  # det -1
    # tolerance: tiny orthonormality error accepted
    R = np.eye(3)
    R[0, 1] = 5e-7
    Pose(R, np.zeros(3))


def test_vertex_map_principal_ray():
    intr = make_intrinsics()
    depth = np.zeros((intr.height, intr.width))
    cy, cx = int(intr.cy), int(intr.cx)
    depth[cy, cx] = 1.0
    vm = compute_vertex_map(depth, intr)
    # cx is x.5 so the exact principal point sits between pixels
    expected = np.array([(cx - intr.cx) / intr.fx, (cy - intr.cy) / intr.fy, 1.0])
    assert np.allclose(vm[cy, cx], expected, atol=1e-12)


def test_vertex_map_missing_depth_invalid():
    intr = make_intrinsics()
    depth = np.ones((intr.height, intr.width))
    depth[5, 7] = 0.0
    vm = compute_vertex_map(depth, intr)
    assert np.isnan(vm[5, 7]).all()
    assert np.isfinite(vm[5, 8]).all()


def test_vertex_map_hand_backprojection():
    # oracle: explicit K^-1 multiplication
    intr = Intrinsics(30.0, 30.0, 40.0, 30.0, 80, 60)
    depth = np.full((60, 80), 2.0)
    vm = compute_vertex_map(depth, intr)
    K = intr.matrix
    Kinv = np.linalg.inv(K)
    x, y = int(intr.cx + intr.fx), int(intr.cy)  # one focal length right of center
    expected = 2.0 * Kinv @ np.array([x, y, 1.0])
    assert np.allclose(vm[y, x], expected, atol=1e-12)
    assert np.allclose(vm[y, x], [2.0, 0.0, 2.0], atol=1e-12)


def test_vertex_map_shape_mismatch():
    with pytest.raises(ValueError):
        compute_vertex_map(np.ones((10, 10)), make_intrinsics(64, 48))
    with pytest.raises(ValueError):
        compute_vertex_map(-np.ones((48, 64)), make_intrinsics(64, 48))


def test_normals_flat_plane():
    intr = make_intrinsics()
    vm = compute_vertex_map(np.full((intr.height, intr.width), 2.0), intr)
    nm = compute_normal_map(vm)
    interior = nm[1:-1, 1:-1]
    assert np.allclose(interior, [0.0, 0.0, -1.0], atol=1e-9)
    # borders invalid
    assert np.isnan(nm[0]).all() and np.isnan(nm[-1]).all()


def test_normals_45_degree_ramp():
    # plane z = X + z0 (45 degree ramp in x); analytic normal is
    # +-(1, 0, -1)/sqrt(2), and the camera-facing choice has n.v < 0
    intr = Intrinsics(100.0, 100.0, 32.0, 24.0, 64, 48)
    xs = np.arange(64)
    # z = z0 / (1 - (x-cx)/fx) gives X = z - z0, i.e. dz/dX = 1
    z0 = 2.0
    z = z0 / (1.0 - (xs - intr.cx) / intr.fx)
    depth = np.tile(z, (48, 1))
    vm = compute_vertex_map(depth, intr)
    nm = compute_normal_map(vm)
    expected = np.array([1.0, 0.0, -1.0]) / np.sqrt(2.0)
    mid = nm[20:28, 28:36].reshape(-1, 3)
    assert np.abs(mid - expected).max() < 1e-6


def test_normals_invalid_near_missing_depth():
    intr = make_intrinsics()
    depth = np.full((intr.height, intr.width), 2.0)
    depth[10, 10] = 0.0
    nm = compute_normal_map(compute_vertex_map(depth, intr))
    for dy, dx in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        assert np.isnan(nm[10 + dy, 10 + dx]).all()


def test_normals_invalid_across_depth_edge():
    intr = make_intrinsics()
    depth = np.full((intr.height, intr.width), 1.0)
    depth[:, 32:] = 2.5  # large jump
    nm = compute_normal_map(compute_vertex_map(depth, intr))
    assert np.isnan(nm[20, 31]).all() and np.isnan(nm[20, 32]).all()
    assert np.isfinite(nm[20, 20]).all()


def test_normal_orientation_toward_camera():
    rng = np.random.default_rng(0)
    intr = make_intrinsics()
    depth = 1.5 + 0.02 * rng.standard_normal((intr.height, intr.width)).cumsum(axis=1) / 10
    vm = compute_vertex_map(depth, intr)
    nm = compute_normal_map(vm)
    valid = np.isfinite(nm).all(axis=-1)
    dots = np.einsum("ijk,ijk->ij", nm, vm)[valid]
    assert (dots <= 1e-12).all()


def test_transforms():
    v = np.array([0.0, 0.0, 1.0])
    assert np.allclose(transform_points(v, Pose.identity()), v)
    t = Pose(np.eye(3), np.array([1.0, 0.0, 0.0]))
    assert np.allclose(transform_points(v, t), [1.0, 0.0, 1.0])
    # oracle: explicit rotation-matrix product for a 90 degree yaw about +z
    yaw = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    p = Pose(yaw, np.zeros(3))
    assert np.allclose(transform_points(np.array([1.0, 0.0, 0.0]), p),
                       yaw @ np.array([1.0, 0.0, 0.0]))
    assert np.allclose(transform_directions(np.array([1.0, 0.0, 0.0]), p), [0.0, 1.0, 0.0])


def test_transform_preserves_direction_norms():
    rng = np.random.default_rng(1)
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    R = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])
    pose = Pose(R, rng.standard_normal(3))
    dirs = rng.standard_normal((100, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    out = transform_directions(dirs, pose)
    assert np.abs(np.linalg.norm(out, axis=1) - 1.0).max() < 1e-6


def test_backproject_project_roundtrip():
    rng = np.random.default_rng(2)
    intr = make_intrinsics(80, 60, 70.0)
    depth = rng.uniform(0.5, 4.0, (60, 80))
    vm = compute_vertex_map(depth, intr)
    u, v, z = project(vm, intr)
    xs, ys = np.meshgrid(np.arange(80), np.arange(60))
    assert np.abs(u - xs).max() < 0.5
    assert np.abs(v - ys).max() < 0.5
    assert np.allclose(z, depth)


def test_axial_noise_polynomial():
    assert axial_noise_sigma(0.4) == pytest.approx(0.0012)
    assert axial_noise_sigma(1.4) == pytest.approx(0.0012 + 0.0019 * 1.0)
    assert axial_noise_sigma(3.0) == pytest.approx(0.0012 + 0.0019 * 2.6 ** 2)


def test_rgb_to_lab_d65():
    white = np.full((4, 4, 3), 255, dtype=np.uint8)
    lab = rgb_to_lab(white)
    assert np.allclose(lab[..., 0], 100.0, atol=0.5)
    assert np.abs(lab[..., 1:]).max() < 0.5
    black = rgb_to_lab(np.zeros((2, 2, 3), dtype=np.uint8))
    assert np.abs(black[..., 0]).max() < 0.5


def test_make_frame_shares_shapes():
    intr = make_intrinsics()
    rgb = np.zeros((intr.height, intr.width, 3), dtype=np.uint8)
    depth = np.ones((intr.height, intr.width), dtype=np.float32)
    f = make_frame(rgb, depth, intr, Pose.identity(), timestamp=3)
    assert f.shape == (intr.height, intr.width)
    assert f.timestamp == 3
    assert f.valid_depth.all()
