import math

import numpy as np
import pytest

from segmap.segment_table import (DegenerateGeometryError, SegmentRecord, SegmentTable,
                                  element_baseline_bytes, estimate_lrf, good_descriptor,
                                  merge_records, update_cnn, update_deep, update_entropy,
                                  update_geo)


def random_rotation(rng):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


# ---------------------------------------------------------------- LRF

def test_lrf_too_few_vertices():
    with pytest.raises(DegenerateGeometryError):
        estimate_lrf(np.random.default_rng(0).standard_normal((9, 3)))


def test_lrf_collinear_degenerate():
    pts = np.zeros((50, 3))
    pts[:, 0] = np.linspace(0, 1, 50)
    with pytest.raises(DegenerateGeometryError, match="rank"):
        estimate_lrf(pts)


def test_lrf_ellipsoid_axes():
    # oracle: closed-form axes of an axis-aligned ellipsoid point set
    rng = np.random.default_rng(3)
    raw = rng.standard_normal((4000, 3))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    pts = raw * np.array([3.0, 2.0, 1.0])
    lrf = estimate_lrf(pts)
    for k, e in enumerate(np.eye(3)):
        assert abs(lrf.axes[:, k] @ e) > 0.99
    assert lrf.eigenvalues[0] > lrf.eigenvalues[1] > lrf.eigenvalues[2] > 0
    assert np.linalg.det(lrf.axes) == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(lrf.axes.T @ lrf.axes, np.eye(3), atol=1e-12)


def test_lrf_translation_invariance():
    rng = np.random.default_rng(4)
    pts = rng.standard_normal((200, 3)) * np.array([2.0, 1.0, 0.5])
    a = estimate_lrf(pts)
    b = estimate_lrf(pts + np.array([10.0, -3.0, 7.0]))
    assert np.allclose(a.axes, b.axes, atol=1e-9)
    assert np.allclose(a.eigenvalues, b.eigenvalues, atol=1e-9)
    assert np.allclose(b.origin - a.origin, [10.0, -3.0, 7.0], atol=1e-9)


# ---------------------------------------------------------------- GOOD

def test_good_descriptor_length_and_normalization():
    rng = np.random.default_rng(5)
    pts = rng.standard_normal((300, 3)) * np.array([2.0, 1.0, 0.5])
    lrf = estimate_lrf(pts)
    d = good_descriptor(pts, lrf)
    assert d.shape == (75,)
    for p in range(3):
        assert d[p * 25:(p + 1) * 25].sum() == pytest.approx(1.0, rel=1e-12)
    assert (d >= 0).all()


def test_good_planar_cloud_collapses_side_views():
    # points in the LRF xy-plane: projections involving z collapse to one row
    rng = np.random.default_rng(6)
    pts = np.zeros((500, 3))
    pts[:, 0] = rng.uniform(-2, 2, 500)
    pts[:, 1] = rng.uniform(-1, 1, 500)
    pts[:, 2] = rng.normal(0, 1e-9, 500)
    lrf = estimate_lrf(pts)
    d = good_descriptor(pts, lrf, bins=5)
    yz = d[:25].reshape(5, 5)   # rows y, cols z
    xz = d[25:50].reshape(5, 5)
    occupied_cols_yz = (yz > 0).any(axis=0).sum()
    occupied_cols_xz = (xz > 0).any(axis=0).sum()
    assert occupied_cols_yz == 1
    assert occupied_cols_xz == 1


def test_good_rigid_invariance_spot():
    rng = np.random.default_rng(7)
    pts = rng.standard_normal((400, 3)) * np.array([2.0, 1.0, 0.5])
    base = good_descriptor(pts, estimate_lrf(pts))
    for i in range(5):
        R = random_rotation(rng)
        t = rng.standard_normal(3) * 5
        moved = pts @ R.T + t
        d = good_descriptor(moved, estimate_lrf(moved))
        assert np.abs(d - base).max() <= 1e-5


# ---------------------------------------------------------------- updates

def test_update_geo_first_observation():
    rec = SegmentRecord(label=0)
    f = np.zeros(75)
    f[:3] = (3.0, 4.0, 0.0)
    update_geo(rec, f)
    assert rec.geo_count == 1
    assert np.linalg.norm(rec.f_geo) == pytest.approx(1.0, rel=1e-12)
    assert rec.f_geo[0] == pytest.approx(0.6, rel=1e-6)
    assert rec.f_geo[1] == pytest.approx(0.8, rel=1e-6)


def test_update_geo_fixed_point():
    rec = SegmentRecord(label=0)
    f = np.zeros(75)
    f[5] = 1.0
    for _ in range(10):
        update_geo(rec, f)
    assert rec.geo_count == 10
    assert np.abs(rec.f_geo - f).max() < 1e-12


def test_update_geo_hand_example():
    # f=(1,0,...), F=(0,1,0,...), count=1 -> normalize((0.5,0.5,...)) = (r2/2, r2/2)
    rec = SegmentRecord(label=0)
    rec.f_geo[0] = 1.0
    rec.geo_count = 1
    f = np.zeros(75)
    f[1] = 1.0
    update_geo(rec, f)
    assert rec.geo_count == 2
    assert rec.f_geo[0] == pytest.approx(math.sqrt(2) / 2, rel=1e-6)
    assert rec.f_geo[1] == pytest.approx(math.sqrt(2) / 2, rel=1e-6)


def test_update_geo_zero_blend_keeps_previous():
    rec = SegmentRecord(label=0)
    rec.f_geo[0] = 1.0
    rec.geo_count = 1
    f = np.zeros(75)
    f[0] = -1.0  # blend = 0 exactly
    update_geo(rec, f)
    assert rec.geo_count == 2
    assert rec.f_geo[0] == 1.0


def test_update_cnn_single_pixel():
    rec = SegmentRecord(label=0)
    f = np.zeros((1, 64))
    f[0, 2] = 5.0
    update_cnn(rec, f)
    assert rec.cnn_count == 1
    assert rec.f_cnn[2] == pytest.approx(1.0)


def test_update_cnn_identical_fixed_point():
    rec = SegmentRecord(label=0)
    f = np.zeros(64)
    f[3] = 1.0
    update_cnn(rec, np.tile(f, (7, 1)))
    assert rec.cnn_count == 7
    assert np.abs(rec.f_cnn - f).max() < 1e-12


def test_update_cnn_sequential_replay():
    # oracle: replay the recurrence by hand for two orthogonal unit features
    rec = SegmentRecord(label=0)
    feats = np.zeros((2, 64))
    feats[0, 0] = 1.0
    feats[1, 1] = 1.0
    update_cnn(rec, feats)
    f = np.zeros(64)
    gamma = 0
    for k in range(2):
        blended = (gamma * f + feats[k]) / (gamma + 1)
        f = blended / np.linalg.norm(blended)
        gamma += 1
    assert rec.cnn_count == 2
    assert np.abs(rec.f_cnn - f).max() < 1e-12
    assert rec.f_cnn[0] == pytest.approx(math.sqrt(2) / 2, rel=1e-6)


def test_update_entropy_examples():
    rec = SegmentRecord(label=0)
    update_entropy(rec, np.zeros(5))
    assert rec.entropy == 0.0 and rec.cnn_count == 5

    rec = SegmentRecord(label=0)
    update_entropy(rec, np.full(9, 0.7))
    assert rec.entropy == pytest.approx(0.7, rel=1e-12)

    rec = SegmentRecord(label=0)
    update_entropy(rec, np.array([0.0, math.log(9)]))
    assert rec.entropy == pytest.approx(math.log(9) / 2, rel=1e-6)
    assert rec.cnn_count == 2


def test_update_deep_fused_matches_replay():
    # the numba kernel must equal a pure-python replay with one shared counter
    rng = np.random.default_rng(8)
    feats = rng.standard_normal((50, 64))
    ents = rng.uniform(0, math.log(9), 50)
    rec = SegmentRecord(label=0)
    rec.f_cnn[0] = 1.0
    rec.cnn_count = 3
    rec.entropy = 0.5
    update_deep(rec, feats, ents)

    f = np.zeros(64)
    f[0] = 1.0
    e, gamma = 0.5, 3
    for k in range(50):
        blended = (gamma * f + feats[k]) / (gamma + 1)
        nrm = np.linalg.norm(blended)
        if nrm > 0:
            f = blended / nrm
        e = (gamma * e + ents[k]) / (gamma + 1)
        gamma += 1
    assert rec.cnn_count == 53
    assert rec.entropy == pytest.approx(e, rel=1e-12)
    assert np.abs(rec.f_cnn - f).max() < 1e-9


def test_update_deep_mismatched_lengths():
    rec = SegmentRecord(label=0)
    with pytest.raises(ValueError):
        update_deep(rec, np.zeros((3, 64)), np.zeros(2))


def test_updates_keep_unit_norm_and_entropy_bounds():
    rng = np.random.default_rng(9)
    rec = SegmentRecord(label=0)
    for _ in range(20):
        update_deep(rec, rng.standard_normal((17, 64)),
                    rng.uniform(0, math.log(9), 17))
        update_geo(rec, np.abs(rng.standard_normal(75)))
        assert np.linalg.norm(rec.f_cnn) == pytest.approx(1.0, abs=1e-6)
        assert np.linalg.norm(rec.f_geo) == pytest.approx(1.0, abs=1e-6)
        assert 0.0 <= rec.entropy <= math.log(9)


# ---------------------------------------------------------------- merge

def test_merge_with_empty_is_identity():
    a = SegmentRecord(label=0)
    a.f_cnn[1] = 1.0
    a.cnn_count = 5
    a.entropy = 0.3
    out = merge_records(a, SegmentRecord(label=1))
    assert out.cnn_count == 5
    assert np.array_equal(out.f_cnn, a.f_cnn)
    assert out.entropy == pytest.approx(0.3)
    assert out.geo_count == 0


def test_merge_identical_unchanged():
    a = SegmentRecord(label=0)
    a.f_cnn[2] = 1.0
    a.cnn_count = 4
    a.entropy = 1.0
    b = a.copy()
    b.label = 1
    out = merge_records(a, b)
    assert out.cnn_count == 8
    assert np.abs(out.f_cnn - a.f_cnn).max() < 1e-12
    assert out.entropy == pytest.approx(1.0)


def test_merge_orthogonal_weighted_direction():
    # counters 3:1 with orthogonal units -> direction tan = 1/3 toward a
    a = SegmentRecord(label=0)
    a.f_geo[0] = 1.0
    a.geo_count = 3
    b = SegmentRecord(label=1)
    b.f_geo[1] = 1.0
    b.geo_count = 1
    out = merge_records(a, b)
    assert out.geo_count == 4
    assert out.f_geo[1] / out.f_geo[0] == pytest.approx(1.0 / 3.0, rel=1e-12)
    assert np.linalg.norm(out.f_geo) == pytest.approx(1.0, rel=1e-12)


def test_merge_both_zero_counters_channel_unset():
    out = merge_records(SegmentRecord(label=0), SegmentRecord(label=1))
    assert out.geo_count == 0 and out.cnn_count == 0
    assert np.all(out.f_geo == 0) and np.all(out.f_cnn == 0)


# ---------------------------------------------------------------- table

def test_table_merge_and_bytes():
    t = SegmentTable()
    a = t.get_or_create(0)
    a.f_cnn[0] = 1.0
    a.cnn_count = 2
    b = t.get_or_create(5)
    b.f_cnn[1] = 1.0
    b.cnn_count = 2
    assert len(t) == 2
    # exact store schema: N_l * (S + G + 1) f32 scalars + two counters
    assert t.feature_store_bytes() == 2 * ((64 + 75 + 1) * 4 + 16)
    assert element_baseline_bytes(1000) == 1000 * 140 * 4
    t.merge(0, 5)
    assert len(t) == 1 and 5 not in t
    assert t.records[0].cnn_count == 4


def test_table_checkpoint_roundtrip(tmp_path):
    t = SegmentTable()
    rng = np.random.default_rng(10)
    for label in (2, 7, 9):
        r = t.get_or_create(label)
        update_deep(r, rng.standard_normal((5, 64)), rng.uniform(0, 1, 5))
        update_geo(r, np.abs(rng.standard_normal(75)))
        r.surfel_count = int(label) * 10
    path = str(tmp_path / "table.npz")
    t.save(path)
    loaded = SegmentTable.load(path)
    assert loaded.labels() == [2, 7, 9]
    for label in (2, 7, 9):
        assert np.array_equal(loaded.records[label].f_cnn, t.records[label].f_cnn)
        assert loaded.records[label].cnn_count == t.records[label].cnn_count
        assert loaded.records[label].surfel_count == t.records[label].surfel_count


def test_table_csv_dump(tmp_path):
    t = SegmentTable()
    r = t.get_or_create(3)
    r.entropy = 0.25
    path = str(tmp_path / "table.csv")
    t.dump_csv(path)
    lines = open(path).read().strip().split("\n")
    assert len(lines) == 2
    assert lines[1].startswith("3,0,0,0.25")
