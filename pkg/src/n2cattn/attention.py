"""Node-to-Cluster attention.

Each cluster ``i`` carries a bi-level query ``(Q_i, q_i)``; each node ``t``
inside cluster ``j`` carries a bi-level key ``(K_j, k_t)`` and a value
``v_t``. Cluster ``i`` attends to every node of every cluster ``j`` it is
connected to in the coarse graph::

    out_i = sum_j A_ij sum_t C_tj kB(i, j, t) v_t / sum_j A_ij sum_t C_tj kB(i, j, t)

``n2c_attn_naive`` evaluates that double sum term by term and is the
reference for everything else. ``n2c_attn_tensor_fast`` and
``n2c_attn_convex_fast`` regroup it as cluster-wise message passing, which
is linear in the number of nodes plus coarse edges.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import _backend
from .errors import DegenerateAttention, NonFiniteInput, ShapeMismatch
from .graph import ClusterAssignment, CoarseGraph
from .kernels import (
    BiLevelKernelKind,
    BiLevelVariant,
    ClusterKernelKind,
    FeatureMapKind,
    check_alpha,
    cluster_logits,
    exp_clamped,
    feature_map,
)

TENSOR, CONVEX, CLUSTER_ONLY, NODE_ONLY = 0, 1, 2, 3


@dataclass(frozen=True)
class AttnConfig:
    kernel: BiLevelKernelKind = field(default_factory=BiLevelKernelKind)
    node_feature_map: FeatureMapKind = FeatureMapKind.ELU_PLUS_ONE
    cluster_kernel: ClusterKernelKind = field(default_factory=ClusterKernelKind)
    # "binary": gate on coarse connectivity; "weighted": gate with raw C^T A C
    mask_mode: str = "binary"
    self_loops: bool = True
    denom_floor: float = 1e-30

    def __post_init__(self):
        object.__setattr__(self, "node_feature_map", FeatureMapKind.parse(self.node_feature_map))
        if self.mask_mode not in ("binary", "weighted"):
            raise ValueError(f"mask_mode must be 'binary' or 'weighted', got {self.mask_mode!r}")
        if not self.denom_floor > 0:
            raise ValueError("denom_floor must be positive")

    @classmethod
    def make(cls, variant="tensor", alpha=0.5, feature_map="elu1", **kw) -> "AttnConfig":
        return cls(kernel=BiLevelKernelKind(variant, alpha), node_feature_map=feature_map, **kw)

    def with_kernel(self, variant, alpha=None) -> "AttnConfig":
        alpha = self.kernel.alpha if alpha is None else alpha
        return AttnConfig(BiLevelKernelKind(variant, alpha), self.node_feature_map,
                          self.cluster_kernel, self.mask_mode, self.self_loops, self.denom_floor)


@dataclass(frozen=True, eq=False)
class BiLevelQKV:
    """Cluster-level queries/keys, node-level queries/keys, node values."""

    Q_cluster: np.ndarray      # m x d_C
    q_node_level: np.ndarray   # m x d_N
    K_cluster: np.ndarray      # m x d_C
    k_node: np.ndarray         # n x d_N
    v_node: np.ndarray         # n x d_v

    def __post_init__(self):
        for name in ("Q_cluster", "q_node_level", "K_cluster", "k_node", "v_node"):
            a = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if a.ndim != 2:
                raise ShapeMismatch(f"{name} must be 2-D")
            if not np.all(np.isfinite(a)):
                raise NonFiniteInput(f"{name} contains NaN or inf")
            object.__setattr__(self, name, a)
        m, n = self.num_clusters, self.num_nodes
        if self.q_node_level.shape[0] != m or self.K_cluster.shape[0] != m:
            raise ShapeMismatch("cluster-level tensors disagree on cluster count")
        if self.v_node.shape[0] != n:
            raise ShapeMismatch("k_node and v_node disagree on node count")
        if self.Q_cluster.shape[1] != self.K_cluster.shape[1]:
            raise ShapeMismatch("Q_cluster and K_cluster dimensions differ")
        if self.q_node_level.shape[1] != self.k_node.shape[1]:
            raise ShapeMismatch("q_node_level and k_node dimensions differ")

    @property
    def num_clusters(self) -> int:
        return self.Q_cluster.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.k_node.shape[0]

    def permute_nodes(self, perm) -> "BiLevelQKV":
        perm = np.asarray(perm)
        k, v = np.empty_like(self.k_node), np.empty_like(self.v_node)
        k[perm], v[perm] = self.k_node, self.v_node
        return BiLevelQKV(self.Q_cluster, self.q_node_level, self.K_cluster, k, v)

    def permute_clusters(self, perm) -> "BiLevelQKV":
        perm = np.asarray(perm)
        out = []
        for a in (self.Q_cluster, self.q_node_level, self.K_cluster):
            b = np.empty_like(a)
            b[perm] = a
            out.append(b)
        return BiLevelQKV(*out, self.k_node, self.v_node)


def glorot_uniform(rng, fan_out, fan_in) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_out, fan_in))


@dataclass(frozen=True, eq=False)
class ProjectionWeights:
    """Linear maps producing the bi-level keys, queries and the values.

    Matrices are stored as (out_dim, in_dim), so ``k_t = W_k @ h_t``.
    """

    W_k: np.ndarray           # node-level key, d_N x d
    W_k_cluster: np.ndarray   # cluster-level key, d_C x d
    W_q: np.ndarray           # node-level query, d_N x d
    W_q_cluster: np.ndarray   # cluster-level query, d_C x d
    W_val: np.ndarray         # value, d_v x d
    init_seed: Optional[int] = None

    def __post_init__(self):
        d = self.W_k.shape[1]
        for name in ("W_k_cluster", "W_q", "W_q_cluster", "W_val"):
            if getattr(self, name).shape[1] != d:
                raise ShapeMismatch(f"{name} input dimension differs from W_k")
        if self.W_q.shape[0] != self.W_k.shape[0]:
            raise ShapeMismatch("node-level query and key dimensions differ")
        if self.W_q_cluster.shape[0] != self.W_k_cluster.shape[0]:
            raise ShapeMismatch("cluster-level query and key dimensions differ")

    @property
    def in_dim(self) -> int:
        return self.W_k.shape[1]

    @classmethod
    def init(cls, in_dim, d_node, d_cluster, d_value, seed=0, shared_queries=False):
        """Seeded Glorot-uniform initialization.

        With ``shared_queries`` the node- and cluster-level queries use the same
        matrix, which requires ``d_node == d_cluster``.
        """
        rng = np.random.default_rng(seed)
        W_k = glorot_uniform(rng, d_node, in_dim)
        W_k_cluster = glorot_uniform(rng, d_cluster, in_dim)
        W_q = glorot_uniform(rng, d_node, in_dim)
        W_q_cluster = glorot_uniform(rng, d_cluster, in_dim)
        W_val = glorot_uniform(rng, d_value, in_dim)
        if shared_queries:
            if d_node != d_cluster:
                raise ShapeMismatch("shared queries need d_node == d_cluster")
            W_q_cluster = W_q
        return cls(W_k, W_k_cluster, W_q, W_q_cluster, W_val, init_seed=seed)

    @classmethod
    def identity(cls, d) -> "ProjectionWeights":
        eye = np.eye(d)
        return cls(eye, eye, eye, eye, eye)


def project_bilevel(H, c: ClusterAssignment, w: ProjectionWeights) -> BiLevelQKV:
    """Node keys/values from each node's own row, cluster queries/keys from pooled rows."""
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != c.num_nodes:
        raise ShapeMismatch(f"H must be {c.num_nodes} x d, got {H.shape}")
    if H.shape[1] != w.in_dim:
        raise ShapeMismatch(f"H has {H.shape[1]} columns, projections expect {w.in_dim}")
    pooled = c.pool(H)
    return BiLevelQKV(
        Q_cluster=pooled @ w.W_q_cluster.T,
        q_node_level=pooled @ w.W_q.T,
        K_cluster=pooled @ w.W_k_cluster.T,
        k_node=H @ w.W_k.T,
        v_node=H @ w.W_val.T,
    )


# -- gates -------------------------------------------------------------------

def gate_matrix(coarse: CoarseGraph, cfg: AttnConfig) -> np.ndarray:
    """Dense m x m edge gate with the configured mask mode and self-loops."""
    if cfg.mask_mode == "binary":
        G = (coarse.adjacency_dense() > 0).astype(np.float64)
        if cfg.self_loops:
            np.fill_diagonal(G, 1.0)
    else:
        G = np.array(coarse.adjacency_dense(), dtype=np.float64)
        if cfg.self_loops:
            G += np.eye(G.shape[0])
    return G


def gate_csr(coarse: CoarseGraph, cfg: AttnConfig):
    """Same gate as ``gate_matrix`` as CSR arrays (indptr, indices, data)."""
    A = coarse.adjacency_csr()
    m = A.shape[0]
    if cfg.mask_mode == "binary":
        A = A.copy()
        A.data = np.ones_like(A.data)
        if cfg.self_loops:
            A = A + sp.identity(m, format="csr")
            A.data = np.ones_like(A.data)
    elif cfg.self_loops:
        A = A + sp.identity(m, format="csr")
    A = sp.csr_matrix(A)
    A.eliminate_zeros()
    A.sort_indices()
    return (A.indptr.astype(np.int64), A.indices.astype(np.int64),
            np.ascontiguousarray(A.data, dtype=np.float64))


# -- shared plumbing -----------------------------------------------------------

def _check(qkv: BiLevelQKV, coarse: CoarseGraph, c: ClusterAssignment):
    m = qkv.num_clusters
    if coarse.num_clusters != m or c.num_clusters != m:
        raise ShapeMismatch(
            f"cluster counts disagree: qkv {m}, coarse {coarse.num_clusters}, CAM {c.num_clusters}"
        )
    if c.num_nodes != qkv.num_nodes:
        raise ShapeMismatch(f"CAM covers {c.num_nodes} nodes, qkv has {qkv.num_nodes}")


def _offsets(logit_offset, m):
    if logit_offset is None:
        return np.zeros(m)
    off = np.asarray(logit_offset, dtype=np.float64).reshape(-1)
    if off.shape != (m,):
        raise ShapeMismatch("logit_offset needs one entry per query cluster")
    return off


def _finish(num, den, floor):
    bad = ~(den >= floor)
    if bad.any():
        rows = np.flatnonzero(bad)
        raise DegenerateAttention(
            f"attention normalizer below {floor:g} for cluster(s) {rows[:8].tolist()}", rows
        )
    return num / den[:, None]


def _naive(qkv, coarse, c, cfg, mode, alpha, logit_offset, backend):
    _check(qkv, coarse, c)
    impl = _backend.get_backend(backend)
    m = qkv.num_clusters
    logits = cluster_logits(qkv.Q_cluster, qkv.K_cluster) + _offsets(logit_offset, m)[:, None]
    kc = np.ascontiguousarray(exp_clamped(logits, cfg.cluster_kernel.logit_clamp))
    gate = np.ascontiguousarray(gate_matrix(coarse, cfg))
    psi_q = np.ascontiguousarray(feature_map(cfg.node_feature_map, qkv.q_node_level))
    psi_k = np.ascontiguousarray(feature_map(cfg.node_feature_map, qkv.k_node))
    num, den = impl.naive_sums(kc, gate, psi_q, psi_k, qkv.v_node,
                               c.nodes, c.clusters, c.weights, mode, float(alpha))
    return _finish(num, den, cfg.denom_floor)


def n2c_attn_naive(qkv: BiLevelQKV, coarse: CoarseGraph, c: ClusterAssignment,
                   cfg: AttnConfig, logit_offset=None, backend=None) -> np.ndarray:
    """Reference evaluation: every (query cluster, key cluster, node) term explicitly.

    Cost is O(m * nnz(C) * d_N); use only as an oracle or on small inputs.
    """
    mode = TENSOR if cfg.kernel.variant is BiLevelVariant.TENSOR else CONVEX
    return _naive(qkv, coarse, c, cfg, mode, cfg.kernel.alpha, logit_offset, backend)


def cluster_level_attn(qkv, coarse, c, cfg: AttnConfig, logit_offset=None, backend=None):
    """Ablation using only the cluster kernel."""
    return _naive(qkv, coarse, c, cfg, CLUSTER_ONLY, 1.0, logit_offset, backend)


def node_level_attn(qkv, coarse, c, cfg: AttnConfig, backend=None):
    """Ablation using only the node kernel."""
    return _naive(qkv, coarse, c, cfg, NODE_ONLY, 0.0, None, backend)


def _edge_gates(qkv, coarse, cfg, logit_offset):
    indptr, indices, data = gate_csr(coarse, cfg)
    m = qkv.num_clusters
    rows = np.repeat(np.arange(m), np.diff(indptr))
    logits = np.einsum("ed,ed->e", qkv.Q_cluster[rows], qkv.K_cluster[indices])
    logits = logits / math.sqrt(qkv.Q_cluster.shape[1]) + _offsets(logit_offset, m)[rows]
    kc = exp_clamped(logits, cfg.cluster_kernel.logit_clamp)
    return indptr, indices, data, kc


def _node_messages(impl, qkv, c, psi_k, indptr, indices, gates):
    """Steps 1 and 3: pack psi(k) v^T per cluster, then pass it along gated edges."""
    m = qkv.num_clusters
    dn, dv = psi_k.shape[1], qkv.v_node.shape[1]
    S, z = impl.aggregate(c.nodes, c.clusters, c.weights, psi_k, qkv.v_node, m)
    packed = np.ascontiguousarray(np.concatenate([S.reshape(m, dn * dv), z], axis=1))
    recv = impl.propagate(indptr, indices, np.ascontiguousarray(gates), packed)
    M = np.ascontiguousarray(recv[:, :dn * dv].reshape(m, dn, dv))
    Z = np.ascontiguousarray(recv[:, dn * dv:])
    return M, Z


def n2c_attn_tensor_fast(qkv: BiLevelQKV, coarse: CoarseGraph, c: ClusterAssignment,
                         cfg: AttnConfig, logit_offset=None, backend=None) -> np.ndarray:
    """Product-kernel attention as four-step cluster message passing.

    1. per cluster j: sum_t C_tj psi(k_t) v_t^T and sum_t C_tj psi(k_t)
    2. per coarse edge (i, j): gate A_ij * k_C(Q_i, K_j)
    3. gated propagation of the step-1 sums along coarse edges
    4. contraction with psi(q_i)
    """
    if cfg.kernel.variant is not BiLevelVariant.TENSOR:
        raise ValueError("n2c_attn_tensor_fast needs a tensor-product kernel config")
    _check(qkv, coarse, c)
    impl = _backend.get_backend(backend)
    psi_q = np.ascontiguousarray(feature_map(cfg.node_feature_map, qkv.q_node_level))
    psi_k = np.ascontiguousarray(feature_map(cfg.node_feature_map, qkv.k_node))
    indptr, indices, data, kc = _edge_gates(qkv, coarse, cfg, logit_offset)
    M, Z = _node_messages(impl, qkv, c, psi_k, indptr, indices, data * kc)
    num, den = impl.readout(psi_q, M, Z)
    return _finish(num, den, cfg.denom_floor)


def n2c_attn_convex_fast(qkv: BiLevelQKV, coarse: CoarseGraph, c: ClusterAssignment,
                         cfg: AttnConfig, logit_offset=None, backend=None) -> np.ndarray:
    """Convex-kernel attention in linear time.

    The cluster term needs only k_C per coarse edge times the pooled values
    sum_t C_tj v_t; the node term reuses the tensor path's packed messages
    with the bare adjacency as gate.
    """
    if cfg.kernel.variant is not BiLevelVariant.CONVEX:
        raise ValueError("n2c_attn_convex_fast needs a convex-combination kernel config")
    _check(qkv, coarse, c)
    impl = _backend.get_backend(backend)
    alpha = check_alpha(cfg.kernel.alpha)
    beta = 1.0 - alpha
    m, dv = qkv.num_clusters, qkv.v_node.shape[1]
    psi_q = np.ascontiguousarray(feature_map(cfg.node_feature_map, qkv.q_node_level))
    psi_k = np.ascontiguousarray(feature_map(cfg.node_feature_map, qkv.k_node))
    indptr, indices, data, kc = _edge_gates(qkv, coarse, cfg, logit_offset)

    ones = np.ones((qkv.num_nodes, 1))
    pooled_v, mass = impl.aggregate(c.nodes, c.clusters, c.weights, ones, qkv.v_node, m)
    packed = np.ascontiguousarray(np.concatenate([pooled_v.reshape(m, dv), mass], axis=1))
    recv = impl.propagate(indptr, indices, np.ascontiguousarray(data * kc), packed)
    num_c, den_c = recv[:, :dv], recv[:, dv]

    M, Z = _node_messages(impl, qkv, c, psi_k, indptr, indices, data)
    num_n, den_n = impl.readout(psi_q, M, Z)
    return _finish(alpha * num_c + beta * num_n, alpha * den_c + beta * den_n, cfg.denom_floor)


def n2c_attn(qkv, coarse, c, cfg: AttnConfig, backend=None) -> np.ndarray:
    """Linear-time attention for whichever bi-level kernel ``cfg`` selects."""
    if cfg.kernel.variant is BiLevelVariant.TENSOR:
        return n2c_attn_tensor_fast(qkv, coarse, c, cfg, backend=backend)
    return n2c_attn_convex_fast(qkv, coarse, c, cfg, backend=backend)


def attention_weights(qkv: BiLevelQKV, coarse: CoarseGraph, c: ClusterAssignment,
                      cfg: AttnConfig, mode: Optional[int] = None) -> np.ndarray:
    """Implied weight of each CAM entry (node t in cluster j) for each query cluster.

    Returns an m x nnz(C) matrix aligned with ``c.nodes`` / ``c.clusters``;
    rows sum to one. Dense, for inspection and tests.
    """
    _check(qkv, coarse, c)
    if mode is None:
        mode = TENSOR if cfg.kernel.variant is BiLevelVariant.TENSOR else CONVEX
    alpha = cfg.kernel.alpha
    kc = exp_clamped(cluster_logits(qkv.Q_cluster, qkv.K_cluster), cfg.cluster_kernel.logit_clamp)
    kn = (feature_map(cfg.node_feature_map, qkv.q_node_level)
          @ feature_map(cfg.node_feature_map, qkv.k_node).T)
    kc_e, kn_e = kc[:, c.clusters], kn[:, c.nodes]
    kb = {TENSOR: kc_e * kn_e, CONVEX: alpha * kc_e + (1 - alpha) * kn_e,
          CLUSTER_ONLY: kc_e, NODE_ONLY: kn_e}[mode]
    terms = gate_matrix(coarse, cfg)[:, c.clusters] * c.weights[None, :] * kb
    den = terms.sum(axis=1)
    _finish(np.zeros((len(den), 0)), den, cfg.denom_floor)
    return terms / den[:, None]


def graphvit_attn(cluster_feats, coarse: CoarseGraph, values, cfg: AttnConfig,
                  w_query=None, w_key=None) -> np.ndarray:
    """Hadamard-masked softmax attention between pooled cluster tokens.

    ``out_i = sum_j A_ij exp(s_ij) V_j / sum_j A_ij exp(s_ij)`` with
    ``s_ij = Q_i.K_j / sqrt(d)``, ``Q = X W_q^T`` and ``K = X W_k^T``
    (identity projections by default). The softmax runs only over each
    row's gated neighbours.
    """
    X = np.asarray(cluster_feats, dtype=np.float64)
    V = np.asarray(values, dtype=np.float64)
    m = coarse.num_clusters
    if X.shape[0] != m or V.shape[0] != m:
        raise ShapeMismatch("cluster features and values need one row per cluster")
    Q = X if w_query is None else X @ np.asarray(w_query).T
    K = X if w_key is None else X @ np.asarray(w_key).T
    indptr, indices, data = gate_csr(coarse, cfg)
    counts = np.diff(indptr)
    if np.any(counts == 0):
        rows = np.flatnonzero(counts == 0)
        raise DegenerateAttention(f"cluster(s) {rows[:8].tolist()} have no gated neighbours", rows)
    rows = np.repeat(np.arange(m), counts)
    s = np.einsum("ed,ed->e", Q[rows], K[indices]) / math.sqrt(Q.shape[1])
    s = s - np.maximum.reduceat(s, indptr[:-1])[rows]
    wts = data * np.exp(s)
    G = sp.csr_matrix((wts, indices, indptr), shape=(m, m))
    num = np.asarray(G @ V)
    den = np.asarray(G.sum(axis=1)).ravel()
    return _finish(num, den, cfg.denom_floor)
