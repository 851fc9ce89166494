"""Forward-only node convolution, random-walk structural encoding and readout."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import EmptyInput, ShapeMismatch
from .graph import Graph

LN_EPS = 1e-5
# above this many nodes RWSE switches from dense powers to batched sparse products
RWSE_DENSE_LIMIT = 512
RWSE_BATCH = 256


@dataclass(frozen=True)
class PipelineConfig:
    gcn_layers: int = 2
    hidden_dim: int = 16
    rwse_steps: int = 8
    use_rwse: bool = True
    use_residual_ln: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.gcn_layers < 0 or self.rwse_steps < 0:
            raise ValueError("layer and step counts must be nonnegative")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be at least 1")


def random_walk_matrix(g: Graph) -> sp.csr_matrix:
    """P = D^-1 A, with P_ii = 1 on degree-zero nodes."""
    A = g.adjacency()
    deg = np.asarray(A.sum(axis=1)).ravel()
    isolated = deg == 0
    inv = np.where(isolated, 0.0, 1.0 / np.where(isolated, 1.0, deg))
    P = sp.diags(inv) @ A + sp.diags(isolated.astype(np.float64))
    return sp.csr_matrix(P)


def rwse(g: Graph, k: int) -> np.ndarray:
    """n x k landing probabilities: column t-1 holds diag(P^t), t = 1..k."""
    if k < 1:
        raise ValueError("rwse needs k >= 1")
    n = g.num_nodes
    out = np.zeros((n, k))
    if n == 0:
        return out
    P = random_walk_matrix(g)
    if n <= RWSE_DENSE_LIMIT:
        Pd = P.toarray()
        cur = Pd.copy()
        for t in range(k):
            out[:, t] = np.diag(cur)
            if t + 1 < k:
                cur = cur @ Pd
        return out
    # e_u^T P^t e_u for a batch of u at a time; memory stays O(n * batch)
    for lo in range(0, n, RWSE_BATCH):
        hi = min(lo + RWSE_BATCH, n)
        idx = np.arange(lo, hi)
        block = np.zeros((n, hi - lo))
        block[idx, idx - lo] = 1.0
        for t in range(k):
            block = P @ block
            out[lo:hi, t] = block[idx, idx - lo]
    return out


def normalized_adjacency(g: Graph) -> sp.csr_matrix:
    """D^-1/2 (A + I) D^-1/2 with degrees counted after adding self-loops."""
    A = g.adjacency() + sp.identity(g.num_nodes, format="csr")
    d = np.asarray(A.sum(axis=1)).ravel()
    s = sp.diags(1.0 / np.sqrt(d))
    return sp.csr_matrix(s @ A @ s)


def gcn_layer(g: Graph, X, W) -> np.ndarray:
    """relu(D^-1/2 (A+I) D^-1/2 X W)."""
    X = np.asarray(X, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if X.shape[0] != g.num_nodes or X.shape[1] != W.shape[0]:
        raise ShapeMismatch(f"cannot propagate X {X.shape} through W {W.shape}")
    return np.maximum(normalized_adjacency(g) @ (X @ W), 0.0)


def layer_norm(x, gain=None, bias=None, eps=LN_EPS) -> np.ndarray:
    """Row-wise layer normalization with population variance."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    y = (x - mu) / np.sqrt(var + eps)
    if gain is not None:
        y = y * gain
    if bias is not None:
        y = y + bias
    return y


def residual_layernorm(x, delta, gain, bias) -> np.ndarray:
    """LN(x + delta) followed by the affine map ``gain * . + bias``."""
    x, delta = np.asarray(x, dtype=np.float64), np.asarray(delta, dtype=np.float64)
    gain, bias = np.asarray(gain, dtype=np.float64), np.asarray(bias, dtype=np.float64)
    if not (x.shape == delta.shape) or x.shape[-1:] != gain.shape or gain.shape != bias.shape:
        raise ShapeMismatch("x, delta, gain and bias lengths must agree")
    if x.shape[-1] < 2:
        raise ShapeMismatch("layer normalization needs at least two features")
    return layer_norm(x + delta, gain, bias)


def mean_pool(cluster_outputs) -> np.ndarray:
    X = np.asarray(cluster_outputs, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyInput("mean_pool needs at least one row")
    return X.mean(axis=0)
