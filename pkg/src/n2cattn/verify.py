"""Randomized verification of the attention identities.

Every suite compares two independently computed quantities on seeded random
instances and records the worst deviation against a fixed tolerance.
Failures are reported in the verdict, never raised.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import _backend
from .attention import (
    AttnConfig,
    BiLevelQKV,
    ProjectionWeights,
    attention_weights,
    cluster_level_attn,
    graphvit_attn,
    n2c_attn_convex_fast,
    n2c_attn_naive,
    n2c_attn_tensor_fast,
    node_level_attn,
    project_bilevel,
)
from .errors import DegenerateAttention
from .graph import ClusterAssignment, CoarseGraph, Graph, build_graph, coarsen, permute_graph
from .kernels import (
    DEFAULT_LOGIT_CLAMP,
    cluster_logits,
    equivalent_feature_map_convex,
    equivalent_feature_map_tensor,
    feature_map,
)

ORACLE_TOL = 1e-8
FEATURE_MAP_TOL = 1e-12
GRAPHVIT_TOL = 1e-10
ENDPOINT_TOL = 1e-12
PERMUTATION_TOL = 1e-12
NORMALIZATION_TOL = 1e-12
CONVEX_ALPHAS = (0.0, 0.25, 0.5, 0.75, 1.0)


def relative_error(a, b) -> float:
    """max |a - b| scaled by the largest magnitude in the reference ``b``."""
    a, b = np.asarray(a), np.asarray(b)
    scale = max(float(np.abs(b).max(initial=0.0)), 1e-300)
    return float(np.abs(a - b).max(initial=0.0)) / scale


@dataclass
class Instance:
    graph: Graph
    cam: ClusterAssignment
    coarse: CoarseGraph
    H: np.ndarray
    weights: ProjectionWeights
    qkv: BiLevelQKV
    cfg: AttnConfig


def random_cam(rng, n, m, soft: bool) -> ClusterAssignment:
    """Every cluster gets at least one node; soft CAMs add random second memberships."""
    labels = np.concatenate([np.arange(m), rng.integers(0, m, n - m)])
    rng.shuffle(labels)
    if not soft:
        return ClusterAssignment.from_labels(labels, m)
    nodes, clusters = [np.arange(n)], [labels]
    extra = np.flatnonzero(rng.random(n) < 0.5)
    second = (labels[extra] + rng.integers(1, m, len(extra))) % m
    nodes.append(extra)
    clusters.append(second)
    nodes, clusters = np.concatenate(nodes), np.concatenate(clusters)
    w = rng.uniform(0.1, 1.0, len(nodes))
    # columns sum to one: a soft mean, keeps pooled queries/keys O(1)
    w /= np.bincount(clusters, weights=w, minlength=m)[clusters]
    return ClusterAssignment(n, m, nodes, clusters, w)


def random_instance(rng, *, n_max=200, m_range=(2, 16), max_dim=16, soft=None,
                    feature_map_kind=None, mask_mode=None, variant="tensor",
                    alpha=0.5, hard_mean=False) -> Instance:
    m = int(rng.integers(m_range[0], m_range[1] + 1))
    n = int(rng.integers(m, max(m, n_max) + 1))
    d = int(rng.integers(1, max_dim + 1))
    d_node = int(rng.integers(1, max_dim + 1))
    d_cluster = int(rng.integers(1, max_dim + 1))
    d_value = int(rng.integers(1, max_dim + 1))
    edges = rng.integers(0, n, size=(int(rng.integers(n, 3 * n + 1)), 2))
    H = rng.normal(size=(n, d))
    g = build_graph(edges, n, H)
    if soft is None:
        soft = bool(rng.integers(2))
    cam = random_cam(rng, n, m, soft and not hard_mean)
    if feature_map_kind is None:
        feature_map_kind = ("elu1", "relu")[int(rng.integers(2))]
    if mask_mode is None:
        mask_mode = ("binary", "weighted")[int(rng.integers(2))]
    w = ProjectionWeights.init(d, d_node, d_cluster, d_value, seed=int(rng.integers(2**31)))
    cfg = AttnConfig.make(variant, alpha, feature_map_kind, mask_mode=mask_mode)
    return Instance(g, cam, coarsen(g, cam), H, w, project_bilevel(H, cam, w), cfg)


def max_abs_logit(inst: Instance) -> float:
    return float(np.abs(cluster_logits(inst.qkv.Q_cluster, inst.qkv.K_cluster)).max())


def _guarded(fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except DegenerateAttention:
        return None


class Suite:
    def __init__(self, name, tolerance):
        self.name, self.tolerance = name, tolerance
        self.max_error = 0.0
        self.checks = 0
        self.degenerate = 0
        self.mismatched_errors = 0

    def record(self, err):
        self.checks += 1
        if not err <= self.max_error:
            self.max_error = float(err) if np.isfinite(err) else math.inf

    def compare(self, a, b, relative=True):
        """Compare two outputs where either may be None (degenerate)."""
        if a is None and b is None:
            self.degenerate += 1
            return
        if a is None or b is None:
            self.mismatched_errors += 1
            self.checks += 1
            return
        self.record(relative_error(a, b) if relative else float(np.abs(a - b).max(initial=0.0)))

    @property
    def passed(self) -> bool:
        return self.mismatched_errors == 0 and self.max_error <= self.tolerance and self.checks > 0

    def to_dict(self):
        return {
            "max_error": self.max_error,
            "tolerance": self.tolerance,
            "checks": self.checks,
            "degenerate": self.degenerate,
            "mismatched_errors": self.mismatched_errors,
            "verdict": "PASS" if self.passed else "FAIL",
        }


def oracle_suites(rng, trials, backend=None, corrupt=False):
    tensor = Suite("oracle_tensor", ORACLE_TOL)
    convex = Suite("oracle_convex", ORACLE_TOL)
    norm = Suite("normalization", NORMALIZATION_TOL)
    clamp_ok = True
    for trial in range(trials):
        inst = random_instance(rng, soft=bool(trial % 2))
        clamp_ok &= max_abs_logit(inst) < DEFAULT_LOGIT_CLAMP
        naive = _guarded(n2c_attn_naive, inst.qkv, inst.coarse, inst.cam, inst.cfg, backend=backend)
        fast = _guarded(n2c_attn_tensor_fast, inst.qkv, inst.coarse, inst.cam, inst.cfg,
                        backend=backend)
        if corrupt and fast is not None:
            fast = fast * (1.0 + 1e-6) + 1e-6
        tensor.compare(fast, naive)
        _check_weights(norm, inst, inst.cfg)
        for alpha in CONVEX_ALPHAS:
            cfg = inst.cfg.with_kernel("convex", alpha)
            naive = _guarded(n2c_attn_naive, inst.qkv, inst.coarse, inst.cam, cfg, backend=backend)
            fast = _guarded(n2c_attn_convex_fast, inst.qkv, inst.coarse, inst.cam, cfg,
                            backend=backend)
            convex.compare(fast, naive)
            _check_weights(norm, inst, cfg)
    return [tensor, convex, norm], clamp_ok


def _check_weights(suite, inst, cfg):
    W = _guarded(attention_weights, inst.qkv, inst.coarse, inst.cam, cfg)
    if W is None:
        suite.degenerate += 1
        return
    if W.min() < 0:
        suite.record(math.inf)
    suite.record(float(np.abs(W.sum(axis=1) - 1.0).max()))


def feature_map_suites(rng, tuples):
    tensor = Suite("feature_map_tensor", FEATURE_MAP_TOL)
    convex = Suite("feature_map_convex", FEATURE_MAP_TOL)
    for _ in range(tuples):
        dc, dn = rng.integers(1, 9, size=2)
        Q, K = rng.normal(size=(2, dc))
        q, k = rng.normal(size=(2, dn))
        # linear cluster kernel (phi = identity); node map identity or elu+1
        psi = (lambda x: x) if rng.integers(2) else (lambda x: feature_map("elu1", x))
        kC, kN = float(Q @ K), float(psi(q) @ psi(k))
        lhs = kC * kN
        rhs = equivalent_feature_map_tensor(Q, psi(q)) @ equivalent_feature_map_tensor(K, psi(k))
        tensor.record(abs(lhs - rhs) / max(1.0, abs(lhs)))
        alpha = float(rng.uniform())
        lhs = alpha * kC + (1 - alpha) * kN
        rhs = (equivalent_feature_map_convex(alpha, Q, psi(q))
               @ equivalent_feature_map_convex(alpha, K, psi(k)))
        convex.record(abs(lhs - rhs) / max(1.0, abs(lhs)))
    return [tensor, convex]


def graphvit_suite(rng, trials, backend=None):
    suite = Suite("graphvit_reduction", GRAPHVIT_TOL)
    for _ in range(trials):
        inst = random_instance(rng, hard_mean=True, feature_map_kind="ones")
        n2c = _guarded(n2c_attn_tensor_fast, inst.qkv, inst.coarse, inst.cam, inst.cfg,
                       backend=backend)
        pooled = inst.cam.pool(inst.H)
        gvit = _guarded(graphvit_attn, pooled, inst.coarse, inst.cam.pool(inst.qkv.v_node),
                        inst.cfg, w_query=inst.weights.W_q_cluster, w_key=inst.weights.W_k_cluster)
        suite.compare(n2c, gvit)
    return suite


def endpoint_suite(rng, trials, backend=None):
    suite = Suite("endpoints", ENDPOINT_TOL)
    for _ in range(trials):
        inst = random_instance(rng)
        for alpha, ref in ((1.0, cluster_level_attn), (0.0, node_level_attn)):
            cfg = inst.cfg.with_kernel("convex", alpha)
            fast = _guarded(n2c_attn_convex_fast, inst.qkv, inst.coarse, inst.cam, cfg,
                            backend=backend)
            suite.compare(fast, _guarded(ref, inst.qkv, inst.coarse, inst.cam, cfg,
                                         backend=backend), relative=False)
    return suite


def permuted_outputs(inst: Instance, node_perm, cluster_perm, fn, backend=None):
    """Outputs on the original, node-permuted and cluster-permuted instances."""
    base = fn(inst.qkv, inst.coarse, inst.cam, inst.cfg, backend=backend)
    g2 = permute_graph(inst.graph, node_perm)
    c2 = inst.cam.permute_nodes(node_perm)
    H2 = np.empty_like(inst.H)
    H2[node_perm] = inst.H
    by_node = fn(project_bilevel(H2, c2, inst.weights), coarsen(g2, c2), c2, inst.cfg,
                 backend=backend)
    c3 = inst.cam.permute_clusters(cluster_perm)
    by_cluster = fn(project_bilevel(inst.H, c3, inst.weights), coarsen(inst.graph, c3), c3,
                    inst.cfg, backend=backend)
    return base, by_node, by_cluster


def permutation_suite(rng, trials, backend=None):
    suite = Suite("permutation", PERMUTATION_TOL)
    for _ in range(trials):
        inst = random_instance(rng, feature_map_kind="elu1")
        p = rng.permutation(inst.graph.num_nodes)
        r = rng.permutation(inst.cam.num_clusters)
        for fn in (n2c_attn_naive, n2c_attn_tensor_fast):
            base, by_node, by_cluster = permuted_outputs(inst, p, r, fn, backend)
            suite.compare(by_node, base, relative=False)
            suite.compare(by_cluster[r], base, relative=False)
    return suite


def run_verify(seed: int = 0, trials: int = 50, backend=None, corrupt: bool = False) -> dict:
    """Run every suite and return a report with a PASS/FAIL verdict.

    ``corrupt`` perturbs the fast tensor path; the oracle suite must then fail.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    suites, clamp_ok = oracle_suites(rng, trials, backend, corrupt)
    suites += feature_map_suites(rng, 20 * trials)
    suites.append(graphvit_suite(rng, min(trials, 20), backend))
    suites.append(endpoint_suite(rng, trials, backend))
    suites.append(permutation_suite(rng, min(trials, 20), backend))
    passed = all(s.passed for s in suites) and clamp_ok
    return {
        "seed": seed,
        "trials": trials,
        "backend": backend or _backend.NAME,
        "logits_within_clamp": clamp_ok,
        "suites": {s.name: s.to_dict() for s in suites},
        "verdict": "PASS" if passed else "FAIL",
        "elapsed_s": time.perf_counter() - t0,
    }
