import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import dense_bilevel_attention, gate_dense, relu_psi
from n2cattn import (
    AttnConfig,
    BiLevelQKV,
    ClusterAssignment,
    DegenerateAttention,
    ProjectionWeights,
    ShapeMismatch,
    attention_weights,
    build_graph,
    cluster_level_attn,
    coarsen,
    graphvit_attn,
    n2c_attn,
    n2c_attn_convex_fast,
    n2c_attn_naive,
    n2c_attn_tensor_fast,
    node_level_attn,
    project_bilevel,
)
from n2cattn.verify import random_instance


def oracle(inst_qkv, cam, coarse, cfg, kind, alpha=0.5):
    psi = relu_psi if cfg.node_feature_map.value == "relu" else None
    G = gate_dense(coarse.adjacency_dense(), cfg.mask_mode, cfg.self_loops)
    q = inst_qkv
    return dense_bilevel_attention(q.Q_cluster, q.q_node_level, q.K_cluster, q.k_node, q.v_node,
                                   cam.to_dense(), G, kind, alpha, psi)


def tiny_qkv(v, k=None, m=1, d=2):
    v = np.asarray(v, dtype=float)
    n = v.shape[0]
    k = np.zeros((n, d)) if k is None else np.asarray(k, dtype=float)
    return BiLevelQKV(np.zeros((m, d)), np.zeros((m, k.shape[1])), np.zeros((m, d)), k, v)


def test_project_bilevel_identity_single_node():
    h = np.array([[0.5, -1.0, 2.0]])
    qkv = project_bilevel(h, ClusterAssignment.from_dense([[1.0]]), ProjectionWeights.identity(3))
    for a in (qkv.Q_cluster, qkv.q_node_level, qkv.K_cluster, qkv.k_node, qkv.v_node):
        np.testing.assert_array_equal(a, h)


def test_project_bilevel_zero_input():
    w = ProjectionWeights.init(4, 3, 5, 2, seed=1)
    qkv = project_bilevel(np.zeros((6, 4)), ClusterAssignment.from_labels([0, 0, 1, 1, 2, 2]), w)
    for a in (qkv.Q_cluster, qkv.q_node_level, qkv.K_cluster, qkv.k_node, qkv.v_node):
        assert not a.any()
    assert qkv.Q_cluster.shape == (3, 5) and qkv.k_node.shape == (6, 3)
    assert qkv.v_node.shape == (6, 2)


def test_project_bilevel_pooled_keys():
    H = np.array([[1.0, 2.0], [3.0, -4.0]])
    qkv = project_bilevel(H, ClusterAssignment.from_labels([0, 0]), ProjectionWeights.identity(2))
    np.testing.assert_allclose(qkv.K_cluster, [(H[0] + H[1]) / 2])
    np.testing.assert_array_equal(qkv.k_node, H)


def test_project_bilevel_shape_errors():
    w = ProjectionWeights.init(4, 3, 3, 3, seed=0)
    with pytest.raises(ShapeMismatch):
        project_bilevel(np.zeros((3, 5)), ClusterAssignment.from_labels([0, 0, 1]), w)
    with pytest.raises(ShapeMismatch):
        project_bilevel(np.zeros((2, 4)), ClusterAssignment.from_labels([0, 0, 1]), w)


def test_glorot_bound():
    w = ProjectionWeights.init(10, 6, 6, 6, seed=3)
    assert np.abs(w.W_k).max() <= math.sqrt(6 / 16)
    assert w.W_k.shape == (6, 10)
    same = ProjectionWeights.init(10, 6, 6, 6, seed=3)
    np.testing.assert_array_equal(w.W_val, same.W_val)
    shared = ProjectionWeights.init(10, 6, 6, 6, seed=3, shared_queries=True)
    np.testing.assert_array_equal(shared.W_q, shared.W_q_cluster)


def test_single_node_single_cluster_returns_value(backend):
    g = build_graph([], 1)
    cam = ClusterAssignment.from_dense([[1.0]])
    qkv = tiny_qkv([[3.0, -1.0]])
    cg = coarsen(g, cam)
    for variant in ("tensor", "convex"):
        cfg = AttnConfig.make(variant)
        np.testing.assert_allclose(n2c_attn_naive(qkv, cg, cam, cfg, backend=backend), [[3, -1]])
        np.testing.assert_allclose(n2c_attn(qkv, cg, cam, cfg, backend=backend), [[3, -1]])
    np.testing.assert_allclose(node_level_attn(qkv, cg, cam, cfg, backend=backend), [[3, -1]])


def test_isolated_clusters_return_own_value(backend):
    g = build_graph([], 2)
    cam = ClusterAssignment.from_dense(np.eye(2))
    qkv = tiny_qkv([[1.0], [7.0]], m=2)
    cg = coarsen(g, cam)
    for fn in (n2c_attn_naive, n2c_attn_tensor_fast):
        np.testing.assert_allclose(fn(qkv, cg, cam, AttnConfig(), backend=backend), [[1], [7]])


def test_three_node_instance_against_dense_sum(backend):
    # path 0-1-2, clusters {0,1} and {2}, unit weights, hand-sized vectors
    g = build_graph([[0, 1], [1, 2]], 3)
    cam = ClusterAssignment.from_dense([[1, 0], [1, 0], [0, 1]])
    qkv = BiLevelQKV(Q_cluster=[[0.2, 0.1], [-0.3, 0.4]], q_node_level=[[1.0], [0.5]],
                     K_cluster=[[0.5, -0.5], [0.1, 0.2]], k_node=[[0.3], [-0.2], [1.0]],
                     v_node=[[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]])
    cg = coarsen(g, cam)
    for variant, kind in (("tensor", "tensor"), ("convex", "convex")):
        cfg = AttnConfig.make(variant, 0.3)
        want = oracle(qkv, cam, cg, cfg, kind, 0.3)
        np.testing.assert_allclose(n2c_attn_naive(qkv, cg, cam, cfg, backend=backend), want,
                                   rtol=1e-13)
        np.testing.assert_allclose(n2c_attn(qkv, cg, cam, cfg, backend=backend), want, rtol=1e-13)


@pytest.mark.parametrize("seed", range(12))
@pytest.mark.parametrize("mask", ["binary", "weighted"])
def test_all_forms_match_dense_oracle(seed, mask, backend):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, n_max=60, m_range=(2, 8), max_dim=6, mask_mode=mask,
                           feature_map_kind="elu1")
    q, cg, cam = inst.qkv, inst.coarse, inst.cam
    cfg = inst.cfg
    np.testing.assert_allclose(n2c_attn_naive(q, cg, cam, cfg, backend=backend),
                               oracle(q, cam, cg, cfg, "tensor"), rtol=1e-11, atol=1e-13)
    np.testing.assert_allclose(n2c_attn_tensor_fast(q, cg, cam, cfg, backend=backend),
                               oracle(q, cam, cg, cfg, "tensor"), rtol=1e-11, atol=1e-13)
    for alpha in (0.0, 0.4, 1.0):
        ccfg = cfg.with_kernel("convex", alpha)
        want = oracle(q, cam, cg, ccfg, "convex", alpha)
        np.testing.assert_allclose(n2c_attn_naive(q, cg, cam, ccfg, backend=backend), want,
                                   rtol=1e-11, atol=1e-13)
        np.testing.assert_allclose(n2c_attn_convex_fast(q, cg, cam, ccfg, backend=backend), want,
                                   rtol=1e-11, atol=1e-13)
    np.testing.assert_allclose(cluster_level_attn(q, cg, cam, cfg, backend=backend),
                               oracle(q, cam, cg, cfg, "cluster"), rtol=1e-11, atol=1e-13)
    np.testing.assert_allclose(node_level_attn(q, cg, cam, cfg, backend=backend),
                               oracle(q, cam, cg, cfg, "node"), rtol=1e-11, atol=1e-13)


@pytest.mark.parametrize("seed", range(6))
def test_relu_map_matches_oracle_or_degenerates(seed, backend):
    rng = np.random.default_rng(100 + seed)
    inst = random_instance(rng, n_max=60, m_range=(2, 8), max_dim=6, feature_map_kind="relu")
    q, cg, cam, cfg = inst.qkv, inst.coarse, inst.cam, inst.cfg
    with np.errstate(invalid="ignore", divide="ignore"):
        want = oracle(q, cam, cg, cfg, "tensor")
    if not np.all(np.isfinite(want)):
        with pytest.raises(DegenerateAttention):
            n2c_attn_naive(q, cg, cam, cfg, backend=backend)
        with pytest.raises(DegenerateAttention):
            n2c_attn_tensor_fast(q, cg, cam, cfg, backend=backend)
        return
    np.testing.assert_allclose(n2c_attn_tensor_fast(q, cg, cam, cfg, backend=backend), want,
                               rtol=1e-10, atol=1e-13)


def test_backends_agree():
    from n2cattn import _backend
    if len(_backend.available()) < 2:
        pytest.skip("compiled extension not built")
    rng = np.random.default_rng(7)
    for _ in range(10):
        inst = random_instance(rng, feature_map_kind="elu1")
        args = (inst.qkv, inst.coarse, inst.cam, inst.cfg)
        for fn in (n2c_attn_naive, n2c_attn_tensor_fast):
            a = fn(*args, backend="cython")
            b = fn(*args, backend="python")
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_tensor_fast_invariant_to_per_query_logit_shift(seed, backend):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, feature_map_kind="elu1")
    args = (inst.qkv, inst.coarse, inst.cam, inst.cfg)
    base = n2c_attn_tensor_fast(*args, backend=backend)
    shift = rng.uniform(-5, 5, inst.cam.num_clusters)
    np.testing.assert_allclose(n2c_attn_tensor_fast(*args, logit_offset=shift, backend=backend),
                               base, rtol=1e-10, atol=1e-12)
    # the shift really reaches the gate: cluster-only attention is unchanged too
    np.testing.assert_allclose(cluster_level_attn(*args, logit_offset=shift, backend=backend),
                               cluster_level_attn(*args, backend=backend), rtol=1e-10)


def test_cluster_level_single_cluster_is_weighted_mean(backend):
    g = build_graph([[0, 1], [1, 2]], 3)
    cam = ClusterAssignment.from_dense([[0.2], [0.5], [0.3]])
    v = np.array([[1.0, 0.0], [0.0, 4.0], [2.0, 2.0]])
    qkv = BiLevelQKV([[0.3, -0.1]], [[1.0]], [[0.7, 0.2]], [[0.1], [0.2], [0.3]], v)
    out = cluster_level_attn(qkv, coarsen(g, cam), cam, AttnConfig(), backend=backend)
    w = np.array([0.2, 0.5, 0.3])
    np.testing.assert_allclose(out[0], w @ v / w.sum(), rtol=1e-14)


def test_cluster_level_one_node_per_cluster_is_masked_softmax(backend):
    rng = np.random.default_rng(2)
    m, d = 5, 3
    g = build_graph([[0, 1], [1, 2], [3, 4]], m)
    cam = ClusterAssignment.from_dense(np.eye(m))
    Q, K, v = rng.normal(size=(3, m, d))
    qkv = BiLevelQKV(Q, np.ones((m, 1)), K, np.ones((m, 1)), v)
    out = cluster_level_attn(qkv, coarsen(g, cam), cam, AttnConfig(), backend=backend)
    mask = g.adjacency().toarray() + np.eye(m)
    s = np.where(mask > 0, Q @ K.T / math.sqrt(d), -np.inf)
    p = np.exp(s - s.max(axis=1, keepdims=True))
    np.testing.assert_allclose(out, (p / p.sum(axis=1, keepdims=True)) @ v, rtol=1e-13)


def test_node_level_identical_keys_gives_weighted_mean(backend):
    rng = np.random.default_rng(4)
    n, m = 9, 3
    g = build_graph([[0, 3], [3, 6], [1, 2]], n)
    cam = ClusterAssignment.from_labels(np.arange(n) % m, m)
    k = np.tile(rng.normal(size=(1, 4)), (n, 1))
    v = rng.normal(size=(n, 2))
    qkv = BiLevelQKV(rng.normal(size=(m, 2)), rng.normal(size=(m, 4)), rng.normal(size=(m, 2)),
                     k, v)
    cg = coarsen(g, cam)
    out = node_level_attn(qkv, cg, cam, AttnConfig(), backend=backend)
    G = gate_dense(cg.adjacency_dense())
    C = cam.to_dense()
    want = (G @ C.T @ v) / (G @ C.T).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(out, want, rtol=1e-13)


@pytest.mark.parametrize("seed", range(10))
def test_convex_endpoints(seed, backend):
    inst = random_instance(np.random.default_rng(seed))
    args = (inst.qkv, inst.coarse, inst.cam)
    try:
        ref1 = cluster_level_attn(*args, inst.cfg, backend=backend)
        ref0 = node_level_attn(*args, inst.cfg, backend=backend)
    except DegenerateAttention:
        pytest.skip("degenerate draw")
    out1 = n2c_attn_convex_fast(*args, inst.cfg.with_kernel("convex", 1.0), backend=backend)
    out0 = n2c_attn_convex_fast(*args, inst.cfg.with_kernel("convex", 0.0), backend=backend)
    assert np.abs(out1 - ref1).max() <= 1e-12
    assert np.abs(out0 - ref0).max() <= 1e-12


def test_convex_continuous_in_alpha(backend):
    inst = random_instance(np.random.default_rng(9), feature_map_kind="elu1")
    args = (inst.qkv, inst.coarse, inst.cam)
    alphas = np.linspace(0, 1, 41)
    outs = np.array([n2c_attn_convex_fast(*args, inst.cfg.with_kernel("convex", a),
                                          backend=backend) for a in alphas])
    steps = np.abs(np.diff(outs, axis=0)).max(axis=(1, 2))
    scale = np.abs(outs).max()
    # the output is a ratio of affine functions of alpha with positive denominator
    assert steps.max() <= 0.2 * scale
    half = n2c_attn_convex_fast(*args, inst.cfg.with_kernel("convex", 0.5 + 1e-9),
                                backend=backend)
    np.testing.assert_allclose(half, outs[20], atol=1e-7 * scale)


def test_attention_weights_normalized():
    rng = np.random.default_rng(12)
    for _ in range(10):
        inst = random_instance(rng, feature_map_kind="elu1")
        for cfg in (inst.cfg, inst.cfg.with_kernel("convex", 0.3)):
            W = attention_weights(inst.qkv, inst.coarse, inst.cam, cfg)
            assert W.shape == (inst.cam.num_clusters, inst.cam.nnz)
            assert W.min() >= 0
            np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-12)
            # the weights reproduce the output when applied to the node values
            out = W @ inst.qkv.v_node[inst.cam.nodes]
            np.testing.assert_allclose(out, n2c_attn_naive(inst.qkv, inst.coarse, inst.cam, cfg),
                                       rtol=1e-11, atol=1e-13)


def test_zero_denominator_raises(backend):
    # relu of negative queries kills every node-kernel term
    g = build_graph([[0, 1]], 2)
    cam = ClusterAssignment.from_dense(np.eye(2))
    qkv = BiLevelQKV(np.zeros((2, 1)), -np.ones((2, 1)), np.zeros((2, 1)), np.ones((2, 1)),
                     np.ones((2, 1)))
    cfg = AttnConfig.make("tensor", feature_map="relu")
    cg = coarsen(g, cam)
    for fn in (n2c_attn_naive, n2c_attn_tensor_fast):
        with pytest.raises(DegenerateAttention) as info:
            fn(qkv, cg, cam, cfg, backend=backend)
        assert list(info.value.rows) == [0, 1]


def test_shape_mismatch_between_inputs():
    inst = random_instance(np.random.default_rng(0), m_range=(3, 3))
    other = ClusterAssignment.from_labels(np.zeros(inst.cam.num_nodes, dtype=int), 1)
    with pytest.raises(ShapeMismatch):
        n2c_attn_naive(inst.qkv, inst.coarse, other, inst.cfg)


def test_fast_paths_check_variant():
    inst = random_instance(np.random.default_rng(0))
    with pytest.raises(ValueError):
        n2c_attn_tensor_fast(inst.qkv, inst.coarse, inst.cam, inst.cfg.with_kernel("convex", .5))
    with pytest.raises(ValueError):
        n2c_attn_convex_fast(inst.qkv, inst.coarse, inst.cam, inst.cfg)


def test_sparse_coarse_storage_gives_same_output(backend):
    inst = random_instance(np.random.default_rng(21), feature_map_kind="elu1")
    sparse = coarsen(inst.graph, inst.cam, dense=False)
    for cfg in (inst.cfg, inst.cfg.with_kernel("convex", 0.6)):
        np.testing.assert_allclose(n2c_attn(inst.qkv, sparse, inst.cam, cfg, backend=backend),
                                   n2c_attn(inst.qkv, inst.coarse, inst.cam, cfg, backend=backend),
                                   rtol=1e-14)


def test_graphvit_single_cluster():
    g = build_graph([], 1)
    cam = ClusterAssignment.from_dense([[1.0]])
    out = graphvit_attn([[0.3, 0.4]], coarsen(g, cam), [[5.0, 6.0]], AttnConfig())
    np.testing.assert_allclose(out, [[5.0, 6.0]])


def test_graphvit_fully_masked_row():
    g = build_graph([[0, 1]], 3)
    cam = ClusterAssignment.from_dense(np.eye(3))
    with pytest.raises(DegenerateAttention):
        graphvit_attn(np.ones((3, 2)), coarsen(g, cam), np.ones((3, 2)),
                      AttnConfig(self_loops=False))


@pytest.mark.parametrize("seed", range(8))
def test_graphvit_reduction(seed, backend):
    inst = random_instance(np.random.default_rng(seed), hard_mean=True, feature_map_kind="ones")
    n2c = n2c_attn_tensor_fast(inst.qkv, inst.coarse, inst.cam, inst.cfg, backend=backend)
    gvit = graphvit_attn(inst.cam.pool(inst.H), inst.coarse, inst.cam.pool(inst.qkv.v_node),
                         inst.cfg, w_query=inst.weights.W_q_cluster,
                         w_key=inst.weights.W_k_cluster)
    assert np.abs(n2c - gvit).max() <= 1e-10 * np.abs(gvit).max()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_permutation_equivariance(seed):
    from n2cattn.verify import permuted_outputs
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, n_max=80, m_range=(2, 10), feature_map_kind="elu1")
    p = rng.permutation(inst.graph.num_nodes)
    r = rng.permutation(inst.cam.num_clusters)
    base, by_node, by_cluster = permuted_outputs(inst, p, r, n2c_attn_tensor_fast)
    assert np.abs(by_node - base).max() <= 1e-12
    assert np.abs(by_cluster[r] - base).max() <= 1e-12
