import math

import numpy as np
import pytest
import scipy.sparse as sp

from segmap.clustering import (ClusterMap, MclParams, build_graph, dump_clusters_csv,
                               dump_graph_csv, extract_clusters, mcl, mcl_dense,
                               mcl_sparse, pairwise_similarity, recluster, segment_weight)
from segmap.segment_table import SegmentRecord


def record(label, cnn_axis=None, geo_axis=None, entropy=0.0, cnn_count=10, geo_count=10):
    r = SegmentRecord(label=label)
    if cnn_axis is not None:
        r.f_cnn[cnn_axis] = 1.0
        r.cnn_count = cnn_count
    else:
        r.cnn_count = 0
    if geo_axis is not None:
        r.f_geo[geo_axis] = 1.0
        r.geo_count = geo_count
    else:
        r.geo_count = 0
    r.entropy = entropy
    return r


# ------------------------------------------------------------ weights

def test_weight_examples():
    assert segment_weight(record(0, 0, 0, entropy=0.0), 9) == 0.0
    assert segment_weight(record(0, 0, 0, entropy=math.log(9)), 9) == 1.0
    assert segment_weight(record(0, 0, 0, entropy=math.log(9) / 2), 9) == pytest.approx(0.5)


def test_weight_clamped_and_unobserved():
    assert segment_weight(record(0, 0, 0, entropy=math.log(9) + 1e-9), 9) == 1.0
    assert segment_weight(record(0, None, 0), 9) == 1.0  # never seen by the network
    with pytest.raises(ValueError):
        segment_weight(record(0, 0, 0), 1)


# ------------------------------------------------------------ similarity

def test_similarity_identical_is_one():
    a = record(0, 3, 5, entropy=0.4)
    b = record(1, 3, 5, entropy=0.4)
    assert pairwise_similarity(a, b, 9) == pytest.approx(1.0, rel=1e-12)


def test_similarity_orthogonal_cnn_full_confidence():
    # w=0 both: d = sqrt(2), s = exp(-6 sqrt(2))
    a = record(0, 0, 5, entropy=0.0)
    b = record(1, 1, 5, entropy=0.0)
    s = pairwise_similarity(a, b, 9, eta=6.0)
    assert s == pytest.approx(math.exp(-6.0 * math.sqrt(2.0)), rel=1e-6)


def test_similarity_full_entropy_uses_geometry_only():
    a = record(0, 0, 5, entropy=math.log(9))
    b = record(1, 1, 5, entropy=math.log(9))  # different cnn, same geo
    assert pairwise_similarity(a, b, 9) == pytest.approx(1.0, rel=1e-12)
    c = record(2, 0, 6, entropy=math.log(9))  # same cnn axis, different geo
    assert pairwise_similarity(a, c, 9) == pytest.approx(math.exp(-6 * math.sqrt(2)), rel=1e-6)


def test_similarity_unset_geometry_contribution():
    # either side without geometry contributes sqrt(2) * min(w_i, w_j)
    a = record(0, 0, None, entropy=math.log(9))       # w=1, no geo
    b = record(1, 0, 5, entropy=math.log(9))          # w=1, geo set
    s = pairwise_similarity(a, b, 9)
    assert s == pytest.approx(math.exp(-6 * math.sqrt(2)), rel=1e-6)
    a2 = record(2, 0, None, entropy=0.0)              # w=0, no geo
    b2 = record(3, 0, 5, entropy=0.0)                 # w=0 -> min is 0
    assert pairwise_similarity(a2, b2, 9) == pytest.approx(1.0, rel=1e-12)


def test_similarity_eta_scaling_identity():
    # s_eta(d)^k == s_{k eta}(d)
    a = record(0, 0, 5, entropy=0.3)
    b = record(1, 1, 6, entropy=0.9)
    s1 = pairwise_similarity(a, b, 9, eta=2.0)
    s3 = pairwise_similarity(a, b, 9, eta=6.0)
    assert s1 ** 3 == pytest.approx(s3, rel=1e-9)


def test_build_graph_symmetric_unit_diagonal():
    records = {i: record(i, i % 3, i % 2, entropy=0.1 * i) for i in range(6)}
    g = build_graph(records, 9, eta=6.0, prune=1e-5)
    m = g.matrix.toarray()
    assert np.array_equal(m, m.T)
    assert np.allclose(np.diag(m), 1.0)
    assert (m >= 0).all() and (m <= 1.0).all()


# ------------------------------------------------------------ MCL

def block_graph():
    # two 3-cliques joined by one weak edge
    m = np.zeros((6, 6))
    for block in ((0, 1, 2), (3, 4, 5)):
        for i in block:
            for j in block:
                m[i, j] = 1.0
    m[2, 3] = m[3, 2] = 0.01
    return m


def test_mcl_two_cliques_two_clusters():
    flow_sparse = mcl_sparse(sp.csr_matrix(block_graph()), MclParams(2.0, 0.0, 100))
    flow_dense = mcl_dense(block_graph(), MclParams(2.0, 0.0, 100))
    ids_s = extract_clusters(flow_sparse)
    ids_d = extract_clusters(flow_dense)
    assert np.array_equal(ids_s, ids_d)
    assert len(set(ids_s)) == 2
    assert len(set(ids_s[:3])) == 1 and len(set(ids_s[3:])) == 1


def test_mcl_identity_graph_singletons():
    m = np.eye(8)
    ids = extract_clusters(mcl_sparse(sp.csr_matrix(m), MclParams(1.6, 0.0, 100)))
    assert len(set(ids)) == 8


def test_mcl_complete_uniform_single_cluster():
    m = np.ones((7, 7))
    ids = extract_clusters(mcl_sparse(sp.csr_matrix(m), MclParams(1.6, 0.0, 100)))
    assert len(set(ids)) == 1


def test_mcl_rejects_asymmetric():
    m = np.eye(4)
    m[0, 1] = 0.5
    with pytest.raises(ValueError):
        mcl_sparse(sp.csr_matrix(m), MclParams())
    with pytest.raises(ValueError):
        mcl_dense(m, MclParams())


def test_mcl_rejects_missing_self_loops():
    m = np.ones((4, 4)) - np.eye(4)
    with pytest.raises(ValueError):
        mcl_sparse(sp.csr_matrix(m), MclParams())


def test_sparse_matches_dense_random_spot():
    rng = np.random.default_rng(11)
    for trial in range(20):
        n = int(rng.integers(4, 33))
        m = rng.uniform(0, 1, (n, n))
        m = (m + m.T) / 2
        m[m < 0.5] = 0.0
        np.fill_diagonal(m, 1.0)
        params = MclParams(1.6, 0.0, 100)
        ids_s = extract_clusters(mcl_sparse(sp.csr_matrix(m), params))
        ids_d = extract_clusters(mcl_dense(m, params))
        assert np.array_equal(ids_s, ids_d), f"trial {trial}"


def test_mcl_permutation_isomorphic():
    rng = np.random.default_rng(12)
    m = block_graph()
    perm = rng.permutation(6)
    mp = m[np.ix_(perm, perm)]
    ids = extract_clusters(mcl_dense(m, MclParams(2.0, 0.0, 100)))
    ids_p = extract_clusters(mcl_dense(mp, MclParams(2.0, 0.0, 100)))
    # permuted clustering equals clustering of permuted nodes up to relabeling
    groups = {}
    for i in range(6):
        groups.setdefault(ids_p[i], set()).add(perm[i])
    orig = {}
    for i in range(6):
        orig.setdefault(ids[i], set()).add(i)
    assert sorted(map(frozenset, groups.values())) == sorted(map(frozenset, orig.values()))


def test_mclparams_validation():
    with pytest.raises(ValueError):
        MclParams(inflation=1.0)
    with pytest.raises(ValueError):
        MclParams(prune=-1e-9)


# ------------------------------------------------------------ recluster

def test_recluster_single_segment():
    cm = recluster({7: record(7, 0, 0)}, 9)
    assert cm.num_clusters == 1
    assert cm.assignment == {7: 0}


def test_recluster_two_orthogonal_groups():
    records = {}
    for i in range(4):
        records[i] = record(i, cnn_axis=0, geo_axis=0, entropy=0.0)
    for i in range(4, 8):
        records[i] = record(i, cnn_axis=1, geo_axis=1, entropy=0.0)
    cm = recluster(records, 9)
    assert cm.num_clusters == 2
    first = {cm.assignment[i] for i in range(4)}
    second = {cm.assignment[i] for i in range(4, 8)}
    assert len(first) == 1 and len(second) == 1 and first != second


def test_recluster_empty():
    cm = recluster({}, 9)
    assert cm.num_clusters == 0


def test_dump_csvs(tmp_path):
    records = {i: record(i, i % 2, 0) for i in range(4)}
    g = build_graph(records, 9)
    gp = str(tmp_path / "graph.csv")
    dump_graph_csv(g, gp)
    assert open(gp).readline().strip() == "i,j,s"
    cm = ClusterMap(assignment={0: 0, 1: 1, 2: 0, 3: 1})
    cp = str(tmp_path / "clusters.csv")
    dump_clusters_csv(cm, cp)
    lines = open(cp).read().strip().split("\n")
    assert lines[0] == "label,cluster" and len(lines) == 5
