"""spdnn: a desk-scale sparse deep neural network inference engine.

Sparse layers in CSR, a fused clamped-ReLU kernel, staging-buffer tiling with
a sliced-ELL weight layout, minibatch weight reuse, active-feature pruning,
double-buffered weight streaming, and batch-parallel multi-worker execution,
all verified against a brute-force dense reference.
"""

from .model import (
    FeatureBatch,
    InferenceConfig,
    LayerCSR,
    ModelError,
    NetworkModel,
    count_edges,
    make_feature_batch,
    make_layer_csr,
    relu_clamped,
    validate_model,
)
from .ingest import (
    GeneratorSpec,
    IngestError,
    generate_synthetic_inputs,
    generate_synthetic_network,
    load_features_tsv,
    load_layer_tsv,
    load_truth_categories,
    read_binary,
    write_binary,
)
from .preprocess import (
    PaddingStats,
    SlicedEllLayer,
    StagingPlan,
    build_staging_plan,
    csr_to_sliced_ell,
    expand_sliced_ell,
    narrow_indices,
    padding_stats,
)
from .engine import (
    InferenceResult,
    LayerOutcome,
    WeightStreamer,
    baseline_layer,
    compact_active,
    infer,
    optimized_layer,
    prepare_model,
)
from .parallel import (
    BalanceReport,
    CommMatrix,
    Partition,
    apply_transfers,
    balance_step,
    gather_categories,
    imbalance_ratio,
    partition_even,
    run_batch_parallel,
)
from .oracle import reference_infer, reference_layer

__version__ = "0.1.0"
