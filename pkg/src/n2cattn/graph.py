"""Graph and cluster-assignment containers plus the coarsening operator.

Graphs are undirected and stored as symmetric CSR. Input edges are
symmetrized, deduplicated and stripped of self-loops at ingest; consumers
that need self-loops (GCN propagation, attention masks) add them explicitly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import IndexOutOfRange, InvalidPermutation, ShapeMismatch

# coarse adjacency is kept dense up to this many clusters
DENSE_LIMIT = 4096


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph in CSR form with a dense feature matrix.

    ``edge_weights`` and ``node_weights`` are only populated on the internal
    coarse levels built by the partitioner; ingested graphs are unit-weighted.
    """

    num_nodes: int
    csr_offsets: np.ndarray
    csr_neighbors: np.ndarray
    features: np.ndarray
    edge_weights: Optional[np.ndarray] = None
    node_weights: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "csr_offsets", _frozen(self.csr_offsets, np.int64))
        object.__setattr__(self, "csr_neighbors", _frozen(self.csr_neighbors, np.int64))
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats.reshape(-1, 1)
        object.__setattr__(self, "features", _frozen(feats, np.float64))
        if self.edge_weights is not None:
            object.__setattr__(self, "edge_weights", _frozen(self.edge_weights, np.float64))
        if self.node_weights is not None:
            object.__setattr__(self, "node_weights", _frozen(self.node_weights, np.float64))
        if len(self.csr_offsets) != self.num_nodes + 1:
            raise ShapeMismatch("csr_offsets must have num_nodes + 1 entries")
        if self.csr_offsets[-1] != len(self.csr_neighbors):
            raise ShapeMismatch("csr_offsets[-1] must equal len(csr_neighbors)")
        if self.features.shape[0] != self.num_nodes:
            raise ShapeMismatch(
                f"features have {self.features.shape[0]} rows, expected {self.num_nodes}"
            )

    @property
    def num_edges(self) -> int:
        return len(self.csr_neighbors) // 2

    @property
    def feat_dim(self) -> int:
        return self.features.shape[1]

    def degrees(self) -> np.ndarray:
        return np.diff(self.csr_offsets)

    def neighbors(self, u: int) -> np.ndarray:
        return self.csr_neighbors[self.csr_offsets[u]:self.csr_offsets[u + 1]]

    def weights(self) -> np.ndarray:
        """Per-stored-edge weights (ones for unit graphs)."""
        if self.edge_weights is None:
            return np.ones(len(self.csr_neighbors))
        return self.edge_weights

    def vertex_weights(self) -> np.ndarray:
        if self.node_weights is None:
            return np.ones(self.num_nodes)
        return self.node_weights

    def edge_list(self) -> np.ndarray:
        """Undirected edges as an (E, 2) array with u < v, sorted."""
        rows = np.repeat(np.arange(self.num_nodes), self.degrees())
        keep = rows < self.csr_neighbors
        return np.stack([rows[keep], self.csr_neighbors[keep]], axis=1)

    def adjacency(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.weights(), self.csr_neighbors, self.csr_offsets),
            shape=(self.num_nodes, self.num_nodes),
        )

    def same_as(self, other: "Graph") -> bool:
        return (
            self.num_nodes == other.num_nodes
            and np.array_equal(self.csr_offsets, other.csr_offsets)
            and np.array_equal(self.csr_neighbors, other.csr_neighbors)
            and np.array_equal(self.features, other.features)
        )


def _csr_from_pairs(n, src, dst, w=None):
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=offsets[1:])
    return offsets, dst, (None if w is None else w[order])


def build_graph(edge_list, num_nodes: int, features=None) -> Graph:
    """Build a symmetric CSR graph from an arbitrary edge list.

    Duplicate and reversed pairs collapse into one undirected edge and
    self-loops are dropped. ``features`` defaults to a single column of ones.
    """
    num_nodes = int(num_nodes)
    edges = np.asarray(edge_list, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= num_nodes):
        raise IndexOutOfRange(f"edge endpoint outside [0, {num_nodes})")
    if features is None:
        features = np.ones((num_nodes, 1))
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] != num_nodes:
        raise ShapeMismatch(
            f"features must have {num_nodes} rows, got shape {features.shape}"
        )
    u, v = edges[:, 0], edges[:, 1]
    keep = u != v
    u, v = u[keep], v[keep]
    keys = np.unique(np.concatenate([u * num_nodes + v, v * num_nodes + u]))
    src, dst = keys // num_nodes, keys % num_nodes
    offsets, nbrs, _ = _csr_from_pairs(num_nodes, src, dst)
    return Graph(num_nodes, offsets, nbrs, features)


def weighted_graph(num_nodes, src, dst, weights, node_weights, features=None) -> Graph:
    """Build a weighted symmetric graph from already-symmetric directed pairs."""
    if features is None:
        features = np.zeros((num_nodes, 0))
    offsets, nbrs, w = _csr_from_pairs(
        num_nodes, np.asarray(src, np.int64), np.asarray(dst, np.int64),
        np.asarray(weights, np.float64),
    )
    return Graph(num_nodes, offsets, nbrs, features, edge_weights=w, node_weights=node_weights)


def _check_perm(perm, n):
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise InvalidPermutation(f"not a bijection on [0, {n})")
    return perm


def permute_graph(g: Graph, perm) -> Graph:
    """Relabel node ``u`` as ``perm[u]``; features move with their node."""
    perm = _check_perm(perm, g.num_nodes)
    feats = np.empty_like(g.features)
    feats[perm] = g.features
    e = g.edge_list()
    return build_graph(perm[e] if len(e) else e, g.num_nodes, feats)


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    """Sparse nonnegative n x m cluster assignment matrix (CAM).

    Stored as coordinate triples. ``hard`` marks a disjoint assignment with
    weight ``1/|V_m|`` on each node's single cluster.
    """

    num_nodes: int
    num_clusters: int
    nodes: np.ndarray
    clusters: np.ndarray
    weights: np.ndarray
    hard: bool = False
    _csr: Optional[sp.csr_matrix] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.int64)
        clusters = np.asarray(self.clusters, dtype=np.int64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if not (nodes.shape == clusters.shape == weights.shape) or nodes.ndim != 1:
            raise ShapeMismatch("nodes, clusters and weights must be equal-length vectors")
        if nodes.size:
            if nodes.min() < 0 or nodes.max() >= self.num_nodes:
                raise IndexOutOfRange("assignment references a node out of range")
            if clusters.min() < 0 or clusters.max() >= self.num_clusters:
                raise IndexOutOfRange("assignment references a cluster out of range")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("assignment weights must be finite and nonnegative")
        # canonical order: by cluster, then node
        order = np.lexsort((nodes, clusters))
        nodes, clusters, weights = nodes[order], clusters[order], weights[order]
        if nodes.size > 1:
            dup = (np.diff(nodes) == 0) & (np.diff(clusters) == 0)
            if dup.any():
                raise ValueError("duplicate (node, cluster) entry in assignment")
        object.__setattr__(self, "nodes", _frozen(nodes, np.int64))
        object.__setattr__(self, "clusters", _frozen(clusters, np.int64))
        object.__setattr__(self, "weights", _frozen(weights, np.float64))
        if self.hard:
            self._check_hard()

    def _check_hard(self):
        counts = np.bincount(self.nodes, minlength=self.num_nodes)
        if np.any(counts != 1):
            raise ValueError("hard CAM requires every node in exactly one cluster")
        sizes = np.bincount(self.clusters, minlength=self.num_clusters)
        if not np.allclose(self.weights, 1.0 / sizes[self.clusters], rtol=0, atol=1e-15):
            raise ValueError("hard CAM weights must equal 1/|V_m|")
        colsum = np.bincount(self.clusters, weights=self.weights, minlength=self.num_clusters)
        nonempty = sizes > 0
        if np.any(np.abs(colsum[nonempty] - 1.0) > 1e-12):
            raise ValueError("hard CAM columns must sum to 1")

    @classmethod
    def from_dense(cls, C, hard: bool = False) -> "ClusterAssignment":
        C = np.asarray(C, dtype=np.float64)
        if C.ndim != 2:
            raise ShapeMismatch("CAM must be a 2-D matrix")
        nodes, clusters = np.nonzero(C)
        return cls(C.shape[0], C.shape[1], nodes, clusters, C[nodes, clusters], hard=hard)

    @classmethod
    def from_labels(cls, labels, num_clusters: Optional[int] = None, weight: str = "mean"):
        """Disjoint assignment from a label vector.

        ``weight="mean"`` gives the hard CAM (1/|V_m|); ``"one"`` puts weight 1
        on every membership, which is what sum pooling would use.
        """
        labels = np.asarray(labels, dtype=np.int64)
        m = int(labels.max()) + 1 if num_clusters is None else int(num_clusters)
        sizes = np.bincount(labels, minlength=m)
        if weight == "mean":
            w = 1.0 / sizes[labels]
        elif weight == "one":
            w = np.ones(len(labels))
        else:
            raise ValueError(f"unknown weight rule {weight!r}")
        return cls(len(labels), m, np.arange(len(labels)), labels, w, hard=(weight == "mean"))

    @property
    def nnz(self) -> int:
        return len(self.weights)

    def to_sparse(self) -> sp.csr_matrix:
        """n x m CSR matrix."""
        if self._csr is None:
            csr = sp.csr_matrix(
                (self.weights, (self.nodes, self.clusters)),
                shape=(self.num_nodes, self.num_clusters),
            )
            object.__setattr__(self, "_csr", csr)
        return self._csr

    def to_dense(self) -> np.ndarray:
        C = np.zeros((self.num_nodes, self.num_clusters))
        C[self.nodes, self.clusters] = self.weights
        return C

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.clusters, minlength=self.num_clusters)

    def column_sums(self) -> np.ndarray:
        return np.bincount(self.clusters, weights=self.weights, minlength=self.num_clusters)

    def pool(self, X) -> np.ndarray:
        """Compute C^T X."""
        X = np.asarray(X, dtype=np.float64)
        if X.shape[0] != self.num_nodes:
            raise ShapeMismatch(f"expected {self.num_nodes} rows, got {X.shape[0]}")
        return np.asarray(self.to_sparse().T @ X)

    def permute_nodes(self, perm) -> "ClusterAssignment":
        perm = _check_perm(perm, self.num_nodes)
        return ClusterAssignment(self.num_nodes, self.num_clusters, perm[self.nodes],
                                 self.clusters, self.weights, hard=self.hard)

    def permute_clusters(self, perm) -> "ClusterAssignment":
        perm = _check_perm(perm, self.num_clusters)
        return ClusterAssignment(self.num_nodes, self.num_clusters, self.nodes,
                                 perm[self.clusters], self.weights, hard=self.hard)


@dataclass(frozen=True, eq=False)
class CoarseGraph:
    """Result of pooling each cluster into a single node.

    ``coarse_adj`` holds the raw weighted C^T A C (dense ndarray when the
    cluster count is at most ``DENSE_LIMIT``, scipy CSR otherwise) and
    ``binary_mask`` its nonzero pattern. No self-loops are injected here.
    """

    cluster_features: np.ndarray
    coarse_adj: object
    binary_mask: object
    # sparse copy of a dense coarse_adj; the linear-time attention reads this
    _csr: Optional[sp.csr_matrix] = field(default=None, repr=False, compare=False)

    @property
    def num_clusters(self) -> int:
        return self.cluster_features.shape[0]

    @property
    def is_dense(self) -> bool:
        return isinstance(self.coarse_adj, np.ndarray)

    def adjacency_csr(self) -> sp.csr_matrix:
        if not self.is_dense:
            return self.coarse_adj
        if self._csr is None:
            object.__setattr__(self, "_csr", sp.csr_matrix(self.coarse_adj))
        return self._csr

    def adjacency_dense(self) -> np.ndarray:
        if self.is_dense:
            return self.coarse_adj
        return self.coarse_adj.toarray()


def coarsen(g: Graph, c: ClusterAssignment, dense: Optional[bool] = None) -> CoarseGraph:
    """Pool features and adjacency through the CAM: C^T X and C^T A C."""
    if c.num_nodes != g.num_nodes:
        raise ShapeMismatch(
            f"assignment covers {c.num_nodes} nodes but graph has {g.num_nodes}"
        )
    C = c.to_sparse()
    Xp = np.asarray(C.T @ g.features)
    Ap = (C.T @ g.adjacency() @ C).tocsr()
    # exact symmetry regardless of summation order
    Ap = ((Ap + Ap.T) * 0.5).tocsr()
    Ap.eliminate_zeros()
    Ap.sort_indices()
    if dense is None:
        dense = c.num_clusters <= DENSE_LIMIT
    if dense:
        A = Ap.toarray()
        A.setflags(write=False)
        mask = A > 0
        mask.setflags(write=False)
        return CoarseGraph(_frozen(Xp, np.float64), A, mask, Ap)
    mask = Ap.copy()
    mask.data = np.ones_like(mask.data, dtype=bool)
    return CoarseGraph(_frozen(Xp, np.float64), Ap, mask)
