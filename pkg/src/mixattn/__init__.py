"""Mixed sliding-window + linear attention on CPU, with exact-softmax oracles
and a two-path latency model for choosing the head split."""

from .linear import (
    CausalState,
    DegenerateRowError,
    FeatureMapSpec,
    apply_feature_map,
    batched_outer_accumulate,
    causal_linear_cumsum,
    causal_linear_recurrent,
    linear_attention_noncausal,
    outer_product_broadcast,
)
from .mixed import ConfigError, PartitionConfig, mixed_attention_forward, split_heads
from .perf import (
    GAUDI_PAPER,
    LatencyEstimate,
    PerfProfile,
    WorkloadSize,
    calibrate,
    estimate_latency,
    flops_linear,
    flops_sparse,
    optimal_partition,
)
from .reference import QkvProjection, project_qkv, softmax_attention
from .tensor import (
    DomainError,
    FormatError,
    PrecisionError,
    ShapeError,
    batched_matmul,
    elementwise,
    gaussian_orthogonal_matrix,
    get_precision,
    load_tensor,
    dump_tensor,
    precision,
    row_reduce_sum,
    set_precision,
    tensor4,
    verify_mode,
)
from .window import BandedScores, WindowConfig, banded_scores, banded_weighted_sum, windowed_attention, windowed_softmax

__version__ = "0.1.0"
