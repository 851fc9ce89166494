"""Node-to-Cluster attention over partitioned graphs.

Brute-force and linear-time message-passing forms of bi-level kernel
attention, a multilevel graph partitioner, and the forward pipeline that
ties them together. Hot loops run in a compiled extension when it is built
and in numpy otherwise; ``n2cattn.BACKEND`` names the active one.
"""
from ._backend import NAME as BACKEND
from .attention import (
    AttnConfig,
    BiLevelQKV,
    ProjectionWeights,
    attention_weights,
    cluster_level_attn,
    graphvit_attn,
    n2c_attn,
    n2c_attn_convex_fast,
    n2c_attn_naive,
    n2c_attn_tensor_fast,
    node_level_attn,
    project_bilevel,
)
from .encode import PipelineConfig, gcn_layer, mean_pool, residual_layernorm, rwse
from .errors import (
    DegenerateAttention,
    EmptyInput,
    IndexOutOfRange,
    InvalidAlpha,
    InvalidConfig,
    InvalidPermutation,
    LabelOutOfRange,
    N2CError,
    NonFiniteInput,
    ParseError,
    ShapeMismatch,
)
from .graph import ClusterAssignment, CoarseGraph, Graph, build_graph, coarsen, permute_graph
from .io import load_graph_json
from .kernels import (
    BiLevelKernelKind,
    ClusterKernelKind,
    FeatureMapKind,
    bilevel_kernel,
    cluster_kernel,
    equivalent_feature_map_convex,
    equivalent_feature_map_tensor,
    feature_map,
)
from .partition import (
    Partition,
    PartitionConfig,
    cut_and_balance,
    hard_cam,
    heavy_edge_matching,
    multilevel_partition,
)
from .pipeline import RunConfig, run_forward
from .verify import run_verify

__version__ = "0.1.0"
