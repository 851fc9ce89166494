"""Scaling benchmark: brute-force double sum versus message passing.

Graphs are seeded Erdos-Renyi with expected degree 8, partitioned into
``m = n * ratio`` clusters. The fitted slope of log(time) against log(n)
separates the O(n * m) reference from the O(n + |E^P|) fast path.
"""
from __future__ import annotations

import statistics
import time

import numpy as np

from . import _backend
from .attention import AttnConfig, ProjectionWeights, n2c_attn_naive, n2c_attn_tensor_fast, project_bilevel
from .graph import build_graph, coarsen
from .partition import PartitionConfig, hard_cam, multilevel_partition

EXPECTED_DEGREE = 8
FAST_SLOPE_MAX = 1.3
NAIVE_SLOPE_MIN = 1.7


def erdos_renyi(n, expected_degree, rng, feat_dim=16):
    """G(n, p) with p = expected_degree / (n - 1), sampled edge-count first."""
    pairs = n * (n - 1) // 2
    p = min(1.0, expected_degree / max(n - 1, 1))
    num = int(rng.binomial(pairs, p))
    # rejection sampling of distinct unordered pairs; cheap while the graph is sparse
    uv = rng.integers(0, n, size=(int(num * 1.2) + 16, 2))
    uv = np.sort(uv[uv[:, 0] != uv[:, 1]], axis=1)
    _, first = np.unique(uv[:, 0] * n + uv[:, 1], return_index=True)
    uv = uv[np.sort(first)][:num]
    u, v = uv[:, 0], uv[:, 1]
    return build_graph(np.stack([u, v], axis=1), n, rng.normal(size=(n, feat_dim)))


def fit_slope(ns, times) -> float:
    """Least-squares slope of log(time) versus log(n)."""
    return float(np.polyfit(np.log(ns), np.log(times), 1)[0])


def _time(fn, repeats):
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def bench_case(n, ratio, seed, dim=16):
    rng = np.random.default_rng([seed, n])
    g = erdos_renyi(n, EXPECTED_DEGREE, rng, feat_dim=dim)
    k = max(1, int(round(n * ratio)))
    part = multilevel_partition(g, PartitionConfig(k, seed=seed))
    cam = hard_cam(part)
    coarse = coarsen(g, cam)
    w = ProjectionWeights.init(dim, dim, dim, dim, seed=seed)
    qkv = project_bilevel(g.features, cam, w)
    return g, cam, coarse, qkv


def run_bench(n_list, clusters_per_node_ratio=1 / 8, repeats=3, backends=None, seed=0,
              dim=16) -> dict:
    """Median wall times of both attention paths per size and backend, plus slopes."""
    n_list = sorted(int(n) for n in n_list)
    if len(n_list) < 3:
        raise ValueError("need at least three sizes to fit a slope")
    if backends is None:
        backends = [_backend.NAME]
    cfg = AttnConfig.make("tensor", feature_map="elu1")
    rows = []
    cases = {n: bench_case(n, clusters_per_node_ratio, seed, dim) for n in n_list}
    for name in backends:
        for n in n_list:
            g, cam, coarse, qkv = cases[n]
            t_naive = _time(lambda: n2c_attn_naive(qkv, coarse, cam, cfg, backend=name), repeats)
            t_fast = _time(lambda: n2c_attn_tensor_fast(qkv, coarse, cam, cfg, backend=name),
                           repeats)
            rows.append({
                "backend": name,
                "n": n,
                "m": cam.num_clusters,
                "edges": g.num_edges,
                "coarse_edges": int(coarse.adjacency_csr().nnz // 2),
                "naive_s": t_naive,
                "fast_s": t_fast,
            })
    slopes = {}
    for name in backends:
        sel = [r for r in rows if r["backend"] == name]
        ns = [r["n"] for r in sel]
        slopes[name] = {
            "naive": fit_slope(ns, [r["naive_s"] for r in sel]),
            "fast": fit_slope(ns, [r["fast_s"] for r in sel]),
        }
    ok = all(s["fast"] <= FAST_SLOPE_MAX and s["naive"] >= NAIVE_SLOPE_MIN
             for s in slopes.values())
    return {
        "sizes": n_list,
        "ratio": clusters_per_node_ratio,
        "repeats": repeats,
        "seed": seed,
        "dim": dim,
        "rows": rows,
        "slopes": slopes,
        "thresholds": {"fast_max": FAST_SLOPE_MAX, "naive_min": NAIVE_SLOPE_MIN},
        "verdict": "PASS" if ok else "FAIL",
    }


def format_table(report) -> str:
    lines = [f"{'backend':<8} {'n':>7} {'m':>6} {'|E^P|':>8} {'naive_s':>11} {'fast_s':>11}"]
    for r in report["rows"]:
        lines.append(f"{r['backend']:<8} {r['n']:>7} {r['m']:>6} {r['coarse_edges']:>8} "
                     f"{r['naive_s']:>11.6f} {r['fast_s']:>11.6f}")
    for name, s in report["slopes"].items():
        lines.append(f"slope[{name}]: naive {s['naive']:.3f}  fast {s['fast']:.3f}")
    return "\n".join(lines)
