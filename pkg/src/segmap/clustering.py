"""Entropy-weighted segment similarity graph and Markov clustering.

Per-segment weights w = e / log(N) shift each pairwise distance between
deep and geometric features:

    d(i,j) = ||(1-w_i) f_cnn_i - (1-w_j) f_cnn_j||
           + ||w_i f_geo_i - w_j f_geo_j||
    s(i,j) = exp(-eta * d(i,j))

Confident segments (low entropy) are compared on deep features,
uncertain ones on geometry. MCL on the similarity matrix yields a
flexible number of clusters without presetting a count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from .segment_table import SegmentRecord

UNSET_GEO_DISTANCE = np.sqrt(2.0)
MCL_CONVERGENCE = 1e-6
ATTRACTOR_TOL = 1e-6


@dataclass
class MclParams:
    inflation: float = 1.6
    prune: float = 1e-5
    max_iters: int = 100

    def __post_init__(self):
        if self.inflation <= 1.0:
            raise ValueError("inflation must exceed 1")
        if self.prune < 0:
            raise ValueError("prune threshold must be nonnegative")


@dataclass
class SegmentGraph:
    """Symmetric similarity matrix over segment labels, unit diagonal."""

    labels: list
    matrix: sp.csr_matrix

    @property
    def num_nodes(self):
        return len(self.labels)


@dataclass
class ClusterMap:
    """Segment label -> cluster id."""

    assignment: dict = field(default_factory=dict)

    @property
    def num_clusters(self) -> int:
        return len(set(self.assignment.values())) if self.assignment else 0

    def members(self):
        out = {}
        for label, cid in self.assignment.items():
            out.setdefault(cid, []).append(label)
        return out


def segment_weight(record: SegmentRecord, num_classes: int) -> float:
    """Entropy weight in [0, 1]; segments never observed by the network get 1."""
    if num_classes < 2:
        raise ValueError("need at least 2 trained classes")
    if record.cnn_count == 0:
        return 1.0
    return float(np.clip(record.entropy / np.log(num_classes), 0.0, 1.0))


def pairwise_distance(rec_i: SegmentRecord, rec_j: SegmentRecord, num_classes: int) -> float:
    w_i = segment_weight(rec_i, num_classes)
    w_j = segment_weight(rec_j, num_classes)
    d_cnn = float(np.linalg.norm((1.0 - w_i) * rec_i.f_cnn - (1.0 - w_j) * rec_j.f_cnn))
    if rec_i.geo_count > 0 and rec_j.geo_count > 0:
        d_geo = float(np.linalg.norm(w_i * rec_i.f_geo - w_j * rec_j.f_geo))
    else:
        # unset geometry acts as a maximally distant unit vector
        d_geo = UNSET_GEO_DISTANCE * min(w_i, w_j)
    return d_cnn + d_geo


def pairwise_similarity(rec_i: SegmentRecord, rec_j: SegmentRecord,
                        num_classes: int, eta: float = 6.0) -> float:
    return float(np.exp(-eta * pairwise_distance(rec_i, rec_j, num_classes)))


def build_graph(records: dict[int, SegmentRecord], num_classes: int,
                eta: float = 6.0, prune: float = 1e-5) -> SegmentGraph:
    """Full pairwise similarity graph, sparsified below ``prune``.

    The diagonal is 1 regardless of pruning so every node stays in the
    matrix.
    """
    labels = sorted(records)
    m = len(labels)
    if m == 0:
        return SegmentGraph(labels=[], matrix=sp.csr_matrix((0, 0)))
    recs = [records[l] for l in labels]
    w = np.array([segment_weight(r, num_classes) for r in recs])
    f_cnn = np.stack([r.f_cnn for r in recs])
    f_geo = np.stack([r.f_geo for r in recs])
    geo_set = np.array([r.geo_count > 0 for r in recs])

    d = cdist((1.0 - w)[:, None] * f_cnn, (1.0 - w)[:, None] * f_cnn)
    d_geo = cdist(w[:, None] * f_geo, w[:, None] * f_geo)
    unset = ~(geo_set[:, None] & geo_set[None, :])
    if unset.any():
        d_geo = np.where(unset, UNSET_GEO_DISTANCE * np.minimum(w[:, None], w[None, :]), d_geo)
    d += d_geo
    np.fill_diagonal(d, 0.0)
    s = np.exp(-eta * d)
    s[s < prune] = 0.0
    np.fill_diagonal(s, 1.0)
    s = np.triu(s) + np.triu(s, 1).T  # exact symmetry
    return SegmentGraph(labels=labels, matrix=sp.csr_matrix(s))


def _normalize_columns_sparse(m: sp.csc_matrix) -> sp.csc_matrix:
    sums = np.asarray(m.sum(axis=0)).ravel()
    empty = sums <= 0
    if empty.any():
        m = m.tolil()
        for j in np.nonzero(empty)[0]:
            m[j, j] = 1.0
        m = m.tocsc()
        sums = np.asarray(m.sum(axis=0)).ravel()
    m.data /= np.repeat(sums, np.diff(m.indptr))
    return m


def mcl_sparse(matrix, params: MclParams | None = None) -> np.ndarray:
    """Sparse Markov clustering; returns the converged column-stochastic flow.

    Each round: expand (M <- M @ M), inflate (entrywise power + column
    normalize), prune entries below the threshold, renormalize. Stops
    when the largest entry change falls below 1e-6 or max_iters.
    """
    params = params or MclParams()
    m = sp.csc_matrix(matrix, dtype=np.float64)
    if m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square")
    if (abs(m - m.T) > 1e-12).nnz:
        raise ValueError("matrix must be symmetric")
    if m.diagonal().min() <= 0:
        raise ValueError("matrix must carry positive self-loops")
    m = _normalize_columns_sparse(m)
    for _ in range(params.max_iters):
        prev = m.copy()
        m = (m @ m).tocsc()
        m.data = np.power(m.data, params.inflation)
        m = _normalize_columns_sparse(m)
        if params.prune > 0:
            small = m.data < params.prune
            if small.any():
                m.data[small] = 0.0
                m.eliminate_zeros()
                m = _normalize_columns_sparse(m)
        delta = abs(m - prev)
        if delta.nnz == 0 or delta.max() < MCL_CONVERGENCE:
            break
    return np.asarray(m.todense())


def mcl_dense(matrix, params: MclParams | None = None) -> np.ndarray:
    """Dense reference implementation of the same MCL iteration."""
    params = params or MclParams()
    m = np.array(matrix, dtype=np.float64)
    if m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square")
    if np.abs(m - m.T).max() > 1e-12:
        raise ValueError("matrix must be symmetric")
    if m.diagonal().min() <= 0:
        raise ValueError("matrix must carry positive self-loops")

    def normalize(a):
        sums = a.sum(axis=0)
        for j in np.nonzero(sums <= 0)[0]:
            a[j, j] = 1.0
        return a / a.sum(axis=0)

    m = normalize(m)
    for _ in range(params.max_iters):
        prev = m.copy()
        m = m @ m
        m = normalize(np.power(m, params.inflation))
        if params.prune > 0:
            small = (m > 0) & (m < params.prune)
            if small.any():
                m = normalize(np.where(small, 0.0, m))
        if np.abs(m - prev).max() < MCL_CONVERGENCE:
            break
    return m


def extract_clusters(flow: np.ndarray) -> np.ndarray:
    """Cluster assignment from a converged MCL flow matrix.

    Attractors are rows with diagonal mass; attractors sharing an
    attracted node are unioned; every node joins its strongest
    attractor. Cluster ids are renumbered by smallest member index.
    """
    n = flow.shape[0]
    attractors = np.nonzero(np.diag(flow) > ATTRACTOR_TOL)[0]
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    for j in range(n):
        rows = attractors[flow[attractors, j] > ATTRACTOR_TOL]
        for r in rows[1:]:
            union(rows[0], r)

    assign = np.full(n, -1, dtype=np.int64)
    for i in attractors:
        assign[i] = find(i)
    for j in range(n):
        if assign[j] >= 0:
            continue
        if attractors.size:
            mass = flow[attractors, j]
            k = int(np.argmax(mass))
            if mass[k] > 0:
                assign[j] = find(attractors[k])
                continue
        assign[j] = j  # orphan: own singleton
    # renumber by smallest member node index
    order = {}
    for j in range(n):
        order.setdefault(assign[j], len(order))
    return np.array([order[a] for a in assign], dtype=np.int64)


def mcl(graph: SegmentGraph, params: MclParams | None = None) -> ClusterMap:
    """Run sparse MCL over a segment graph."""
    if graph.num_nodes == 0:
        return ClusterMap()
    flow = mcl_sparse(graph.matrix, params)
    ids = extract_clusters(flow)
    return ClusterMap(assignment={l: int(c) for l, c in zip(graph.labels, ids)})


def recluster(records: dict[int, SegmentRecord], num_classes: int, eta: float = 6.0,
              params: MclParams | None = None) -> ClusterMap:
    """Build the full pairwise graph over a table snapshot and cluster it."""
    params = params or MclParams()
    graph = build_graph(records, num_classes, eta=eta, prune=params.prune)
    return mcl(graph, params)


def dump_graph_csv(graph: SegmentGraph, path: str):
    coo = graph.matrix.tocoo()
    with open(path, "w") as f:
        f.write("i,j,s\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            f.write(f"{graph.labels[i]},{graph.labels[j]},{float(v)!r}\n")


def dump_clusters_csv(clusters: ClusterMap, path: str):
    with open(path, "w") as f:
        f.write("label,cluster\n")
        for label in sorted(clusters.assignment):
            f.write(f"{label},{clusters.assignment[label]}\n")
