"""Deterministic multilevel k-way partitioning (a small Metis stand-in).

Graphs with at least k connected components are first tried as a packing
of whole components. Otherwise heavy-edge matching coarsens the graph until
it has at most ``coarsen_stop`` vertices, a greedy graph-growing pass
produces the initial k-way split on the coarsest level, and the labels are projected back level by
level with a balance repair step and boundary FM refinement at each level.
All ties are broken by the lowest index, and the only randomness (matching
visit order, first growth seed) comes from ``PartitionConfig.seed``.
"""
from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import InvalidConfig, LabelOutOfRange, ShapeMismatch
from .graph import ClusterAssignment, Graph, weighted_graph

# consecutive non-improving FM moves tolerated before a pass stops
FM_PATIENCE = 50


@dataclass(frozen=True)
class PartitionConfig:
    k: int
    balance_eps: float = 0.1
    seed: int = 0
    refine_passes: int = 4
    coarsen_stop: Optional[int] = None

    def __post_init__(self):
        if int(self.k) < 1:
            raise InvalidConfig("k must be at least 1")
        if self.balance_eps < 0:
            raise InvalidConfig("balance_eps must be nonnegative")
        if self.refine_passes < 0:
            raise InvalidConfig("refine_passes must be nonnegative")

    def resolved_stop(self, k_eff: int) -> int:
        if self.coarsen_stop is not None:
            return max(int(self.coarsen_stop), k_eff)
        return max(2 * k_eff, 64)


@dataclass(frozen=True, eq=False)
class Partition:
    labels: np.ndarray
    k_effective: int
    cut_edges: int
    imbalance: float
    # False when the balance target could not be met
    balanced: bool = True
    levels: int = 1
    # (cut before, cut after) for every FM pass, coarsest level first
    refine_history: tuple = field(default=(), repr=False)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k_effective)

    def to_dict(self) -> dict:
        return {
            "labels": self.labels.tolist(),
            "k_effective": int(self.k_effective),
            "cut_edges": int(self.cut_edges),
            "imbalance": float(self.imbalance),
            "balanced": bool(self.balanced),
            "levels": int(self.levels),
            "sizes": self.sizes().tolist(),
        }


class MatchResult(NamedTuple):
    matching: list
    coarser: Graph
    fine_to_coarse: np.ndarray


def _adjacency_lists(g: Graph):
    off = g.csr_offsets.tolist()
    nbr = g.csr_neighbors.tolist()
    w = g.weights().tolist()
    return [list(zip(nbr[off[u]:off[u + 1]], w[off[u]:off[u + 1]])) for u in range(g.num_nodes)]


def heavy_edge_matching(g: Graph, seed=0, order=None, max_vertex_weight=None) -> MatchResult:
    """One coarsening step.

    Nodes are visited in a seeded random order (or the explicit ``order``);
    each still-unmatched node is paired with the unmatched neighbour joined by
    the heaviest edge, lowest index on ties. Matched pairs merge into one
    coarse vertex; parallel edges sum into edge weights.
    """
    n = g.num_nodes
    if order is None:
        order = np.random.default_rng(seed).permutation(n)
    order = [int(u) for u in order]
    off = g.csr_offsets.tolist()
    nbr = g.csr_neighbors.tolist()
    ew = g.weights().tolist()
    vw = g.vertex_weights().tolist()
    cap = math.inf if max_vertex_weight is None else max_vertex_weight
    mate = [-1] * n
    pairs = []
    for u in order:
        if mate[u] != -1:
            continue
        best, best_w = -1, -math.inf
        for e in range(off[u], off[u + 1]):
            v = nbr[e]
            if mate[v] != -1 or v == u or vw[u] + vw[v] > cap:
                continue
            w = ew[e]
            if w > best_w or (w == best_w and v < best):
                best, best_w = v, w
        if best == -1:
            mate[u] = u
        else:
            mate[u], mate[best] = best, u
            pairs.append((min(u, best), max(u, best)))
    cmap = np.full(n, -1, dtype=np.int64)
    nc = 0
    for u in range(n):
        if cmap[u] == -1:
            cmap[u] = nc
            cmap[mate[u]] = nc
            nc += 1
    rows = np.repeat(np.arange(n), g.degrees())
    src, dst = cmap[rows], cmap[g.csr_neighbors]
    keep = src != dst
    keys, inv = np.unique(src[keep] * nc + dst[keep], return_inverse=True)
    wsum = np.bincount(inv, weights=g.weights()[keep], minlength=len(keys))
    node_w = np.bincount(cmap, weights=g.vertex_weights(), minlength=nc)
    coarser = weighted_graph(nc, keys // nc, keys % nc, wsum, node_w)
    return MatchResult(sorted(pairs), coarser, cmap)


def cut_and_balance(g: Graph, labels, k: Optional[int] = None):
    """Exact cut-edge count and imbalance (max part size / ideal size - 1)."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (g.num_nodes,):
        raise ShapeMismatch(f"need {g.num_nodes} labels, got {labels.shape}")
    if g.num_nodes == 0:
        return 0, 0.0
    if labels.min() < 0 or (k is not None and labels.max() >= k):
        raise LabelOutOfRange("label outside the valid part range")
    k = int(labels.max()) + 1 if k is None else int(k)
    e = g.edge_list()
    cut = int(np.count_nonzero(labels[e[:, 0]] != labels[e[:, 1]])) if len(e) else 0
    ideal = g.num_nodes / k
    imbalance = float(np.bincount(labels, minlength=k).max() / ideal - 1.0)
    return cut, imbalance


def hard_cam(p: Partition) -> ClusterAssignment:
    """Disjoint CAM with weight 1/|V_m| on each node's cluster."""
    return ClusterAssignment.from_labels(p.labels, p.k_effective, weight="mean")


# -- refinement machinery ------------------------------------------------------

class _Level:
    """Mutable partition state on one (possibly weighted) level."""

    def __init__(self, g: Graph, labels, k, max_w):
        self.adj = _adjacency_lists(g)
        self.vw = g.vertex_weights().tolist()
        self.labels = [int(x) for x in labels]
        self.k = k
        self.max_w = max_w
        self.pw = [0.0] * k
        self.count = [0] * k
        for u, p in enumerate(self.labels):
            self.pw[p] += self.vw[u]
            self.count[p] += 1
        self.cut = sum(w for u, nb in enumerate(self.adj) for v, w in nb
                       if u < v and self.labels[u] != self.labels[v])

    def conn(self, u):
        c = {}
        for v, w in self.adj[u]:
            p = self.labels[v]
            c[p] = c.get(p, 0.0) + w
        return c

    def best_move(self, u, overweight_only=False):
        """Best feasible (gain, target) for u, or None."""
        src = self.labels[u]
        if self.count[src] <= 1:
            return None
        c = self.conn(u)
        internal = c.get(src, 0.0)
        best = None
        targets = sorted(p for p in c if p != src)
        if overweight_only:
            # balance repair may also push into non-adjacent light parts
            targets = sorted(set(targets) | set(range(self.k)) - {src})
        for p in targets:
            if self.pw[p] + self.vw[u] > self.max_w:
                continue
            gain = c.get(p, 0.0) - internal
            if best is None or gain > best[0]:
                best = (gain, p)
        return best

    def move(self, u, p, gain):
        src = self.labels[u]
        self.labels[u] = p
        self.pw[src] -= self.vw[u]
        self.pw[p] += self.vw[u]
        self.count[src] -= 1
        self.count[p] += 1
        self.cut -= gain

    def boundary(self):
        return [u for u, nb in enumerate(self.adj)
                if any(self.labels[v] != self.labels[u] for v, _ in nb)]

    def rebalance(self):
        """Move vertices out of overweight parts, least cut damage first."""
        for _ in range(len(self.labels)):
            heavy = max(range(self.k), key=lambda p: (self.pw[p], -p))
            if self.pw[heavy] <= self.max_w:
                return
            cand = None
            for u, p in enumerate(self.labels):
                if p != heavy:
                    continue
                mv = self.best_move(u, overweight_only=True)
                if mv is not None and (cand is None or mv[0] > cand[0]):
                    cand = (mv[0], u, mv[1])
            if cand is None:
                return
            gain, u, p = cand
            self.move(u, p, gain)

    def fm_pass(self):
        heap = []
        for u in self.boundary():
            mv = self.best_move(u)
            if mv is not None:
                heapq.heappush(heap, (-mv[0], u, mv[1]))
        locked = [False] * len(self.labels)
        moves = []
        best_cut, best_len, idle = self.cut, 0, 0
        while heap and idle < FM_PATIENCE:
            neg, u, p = heapq.heappop(heap)
            if locked[u]:
                continue
            mv = self.best_move(u)
            if mv is None:
                continue
            if mv[0] != -neg or mv[1] != p:
                heapq.heappush(heap, (-mv[0], u, mv[1]))
                continue
            src = self.labels[u]
            self.move(u, p, mv[0])
            locked[u] = True
            moves.append((u, src, mv[0]))
            if self.cut < best_cut - 1e-9:
                best_cut, best_len, idle = self.cut, len(moves), 0
            else:
                idle += 1
            for v, _ in self.adj[u]:
                if not locked[v]:
                    nv = self.best_move(v)
                    if nv is not None:
                        heapq.heappush(heap, (-nv[0], v, nv[1]))
        for u, src, gain in reversed(moves[best_len:]):
            self.move(u, src, -gain)


def _farthest_starts(adj, k, first):
    nv = len(adj)
    dist = np.full(nv, np.inf)
    starts = []
    s = first
    for _ in range(k):
        starts.append(s)
        dist[s] = 0
        dq = deque([s])
        while dq:
            x = dq.popleft()
            dx = dist[x] + 1
            for y, _ in adj[x]:
                if dx < dist[y]:
                    dist[y] = dx
                    dq.append(y)
        s = int(np.argmax(dist))
        if dist[s] == 0:
            # every vertex is already a start; cannot happen while k <= nv
            break
    return starts


def _grow(g: Graph, k, max_w, rng):
    """Greedy graph growing from k spread-out seeds."""
    adj = _adjacency_lists(g)
    vw = g.vertex_weights().tolist()
    nv = len(adj)
    starts = _farthest_starts(adj, k, int(rng.integers(nv)))
    labels = [-1] * nv
    pw = [0.0] * k
    queues = []
    for p, s in enumerate(starts):
        labels[s] = p
        pw[p] += vw[s]
        queues.append(deque(v for v, _ in adj[s]))
    target = sum(vw) / k
    heap = [(pw[p], p) for p in range(k)]
    heapq.heapify(heap)
    while heap:
        w, p = heapq.heappop(heap)
        if w != pw[p] or pw[p] >= target:
            continue
        q = queues[p]
        while q:
            x = q.popleft()
            if labels[x] == -1 and pw[p] + vw[x] <= max_w:
                labels[x] = p
                pw[p] += vw[x]
                q.extend(v for v, _ in adj[x] if labels[v] == -1)
                heapq.heappush(heap, (pw[p], p))
                break
    # leftovers: join the lightest adjacent part, else the lightest part overall
    changed = True
    while changed:
        changed = False
        for u in range(nv):
            if labels[u] != -1:
                continue
            parts = {labels[v] for v, _ in adj[u] if labels[v] != -1}
            if parts:
                p = min(parts, key=lambda p: (pw[p], p))
                labels[u] = p
                pw[p] += vw[u]
                changed = True
    for u in range(nv):
        if labels[u] == -1:
            p = min(range(k), key=lambda p: (pw[p], p))
            labels[u] = p
            pw[p] += vw[u]
    return labels


def _pack_components(g: Graph, k):
    """Whole connected components dealt largest-first onto the lightest part.

    Returns None when there are fewer components than parts.
    """
    count, comp = connected_components(g.adjacency(), directed=False)
    if count < k:
        return None
    sizes = np.bincount(comp, minlength=count)
    first = np.full(count, g.num_nodes)
    np.minimum.at(first, comp, np.arange(g.num_nodes))
    order = np.lexsort((first, -sizes))
    load = [(0, p) for p in range(k)]
    part_of = np.empty(count, dtype=np.int64)
    for c in order.tolist():
        w, p = heapq.heappop(load)
        part_of[c] = p
        heapq.heappush(load, (w + int(sizes[c]), p))
    return part_of[comp]


def multilevel_partition(g: Graph, cfg: PartitionConfig) -> Partition:
    """Split ``g`` into ``min(cfg.k, n)`` nonempty parts with a small edge cut."""
    n = g.num_nodes
    k = min(int(cfg.k), n)
    if n == 0:
        return Partition(np.zeros(0, dtype=np.int64), 0, 0, 0.0)
    if k == n or k == 1:
        labels = np.arange(n) if k == n else np.zeros(n, dtype=np.int64)
        cut, imb = cut_and_balance(g, labels, k)
        return Partition(labels, k, cut, imb, imb <= cfg.balance_eps + 1e-12)

    # enough components: a zero cut is available whenever it also balances
    packed = _pack_components(g, k)
    if packed is not None:
        cut, imb = cut_and_balance(g, packed, k)
        if imb <= cfg.balance_eps + 1e-12:
            return Partition(packed, k, cut, imb, True)

    rng = np.random.default_rng(cfg.seed)
    stop = cfg.resolved_stop(k)
    max_vertex = max(1, min(math.ceil(1.5 * n / stop), n // (2 * k)))
    max_w = max(math.ceil(n / k), math.floor((1.0 + cfg.balance_eps) * n / k))

    base = weighted_graph(n, np.repeat(np.arange(n), g.degrees()), g.csr_neighbors,
                          np.ones(len(g.csr_neighbors)), np.ones(n))
    graphs, maps = [base], []
    while graphs[-1].num_nodes > stop:
        cur = graphs[-1]
        res = heavy_edge_matching(cur, order=rng.permutation(cur.num_nodes),
                                  max_vertex_weight=max_vertex)
        if res.coarser.num_nodes > 0.95 * cur.num_nodes:
            break
        graphs.append(res.coarser)
        maps.append(res.fine_to_coarse)

    labels = _grow(graphs[-1], k, max_w, rng)
    history = []
    for level in range(len(graphs) - 1, -1, -1):
        if level < len(graphs) - 1:
            labels = [labels[c] for c in maps[level].tolist()]
        state = _Level(graphs[level], labels, k, max_w)
        state.rebalance()
        for _ in range(cfg.refine_passes):
            before = state.cut
            state.fm_pass()
            history.append((before, state.cut))
            if state.cut >= before:
                break
        labels = state.labels

    labels = np.asarray(labels, dtype=np.int64)
    cut, imb = cut_and_balance(g, labels, k)
    return Partition(labels, k, cut, imb, imb <= cfg.balance_eps + 1e-12,
                     levels=len(graphs), refine_history=tuple(history))
