"""Kernels, feature maps and the bi-level kernel combinations.

The cluster kernel is the scaled exp-dot-product. The node kernel is always
expressed through a feature map, ``k_N(q, k) = psi(q) . psi(k)``, with no
extra scaling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InvalidAlpha, NonFiniteInput, ShapeMismatch

DEFAULT_LOGIT_CLAMP = 40.0


class FeatureMapKind(str, Enum):
    ELU_PLUS_ONE = "elu1"
    RELU = "relu"
    # psi(x) = 1 everywhere; makes the node kernel a constant (GraphViT reduction)
    ONES = "ones"

    @classmethod
    def parse(cls, value) -> "FeatureMapKind":
        if isinstance(value, cls):
            return value
        aliases = {"elu-plus-one": "elu1", "elu+1": "elu1", "elu": "elu1", "constant": "ones"}
        return cls(aliases.get(value, value))


class BiLevelVariant(str, Enum):
    TENSOR = "tensor"
    CONVEX = "convex"


@dataclass(frozen=True)
class ClusterKernelKind:
    """exp(Q.K / sqrt(d_k)) with logits clamped to +-logit_clamp."""

    logit_clamp: float = DEFAULT_LOGIT_CLAMP


@dataclass(frozen=True)
class BiLevelKernelKind:
    variant: BiLevelVariant = BiLevelVariant.TENSOR
    alpha: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "variant", BiLevelVariant(self.variant))
        check_alpha(self.alpha)

    @property
    def beta(self) -> float:
        return 1.0 - self.alpha


def check_alpha(alpha) -> float:
    alpha = float(alpha)
    if not (0.0 <= alpha <= 1.0):
        raise InvalidAlpha(f"alpha must lie in [0, 1], got {alpha}")
    return alpha


def feature_map(kind, x) -> np.ndarray:
    """Elementwise node feature map; works on vectors or stacked rows."""
    kind = FeatureMapKind.parse(kind)
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("feature map input contains NaN or inf")
    if kind is FeatureMapKind.ELU_PLUS_ONE:
        # elu(x) + 1 == x + 1 for x > 0 and exp(x) otherwise
        return np.where(x > 0, x + 1.0, np.exp(np.minimum(x, 0.0)))
    if kind is FeatureMapKind.RELU:
        return np.maximum(x, 0.0)
    return np.ones_like(x)


def cluster_logits(Q, K, d_k=None) -> np.ndarray:
    """All-pairs scaled logits Q K^T / sqrt(d_k)."""
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    K = np.atleast_2d(np.asarray(K, dtype=np.float64))
    if Q.shape[1] != K.shape[1]:
        raise ShapeMismatch("query and key dimensions differ")
    d_k = Q.shape[1] if d_k is None else d_k
    if d_k <= 0:
        raise ShapeMismatch("d_k must be positive")
    return (Q @ K.T) / math.sqrt(d_k)


def exp_clamped(logits, clamp=DEFAULT_LOGIT_CLAMP) -> np.ndarray:
    return np.exp(np.clip(logits, -clamp, clamp))


def cluster_kernel(Q, K, d_k=None, kind: ClusterKernelKind = ClusterKernelKind()) -> float:
    Q = np.asarray(Q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    if Q.shape != K.shape or Q.ndim != 1:
        raise ShapeMismatch("cluster_kernel expects two vectors of equal length")
    d_k = len(Q) if d_k is None else d_k
    if d_k <= 0:
        raise ShapeMismatch("d_k must be positive")
    logit = float(Q @ K) / math.sqrt(d_k)
    return math.exp(min(max(logit, -kind.logit_clamp), kind.logit_clamp))


def node_kernel(kind, q, k) -> float:
    return float(feature_map(kind, q) @ feature_map(kind, k))


def bilevel_kernel(kind: BiLevelKernelKind, kC, kN):
    """Combine a cluster-kernel and a node-kernel value (scalars or arrays)."""
    if kind.variant is BiLevelVariant.TENSOR:
        return kC * kN
    return kind.alpha * kC + (1.0 - kind.alpha) * kN


def equivalent_feature_map_tensor(phi, psi) -> np.ndarray:
    """Feature map of the product kernel: flattened outer product phi (x) psi."""
    phi = np.asarray(phi, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    return np.outer(phi, psi).ravel()


def equivalent_feature_map_convex(alpha, phi, psi) -> np.ndarray:
    """Feature map of the convex kernel: sqrt(a) phi concatenated with sqrt(1-a) psi."""
    alpha = check_alpha(alpha)
    phi = np.asarray(phi, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    return np.concatenate([math.sqrt(alpha) * phi, math.sqrt(1.0 - alpha) * psi])
