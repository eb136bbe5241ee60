"""Layer-wise audiovisual token pruning toolkit.

Library + CLI for progressive sigmoid-scheduled pruning of interleaved
audio/video token streams: query-guided importance scoring, temporal
diversity-aware selection, intra-modality pre-pruning, a deterministic toy
decoder harness, and analytic cost diagnostics.
"""

from .errors import (
    ConvergenceFailure,
    DegenerateInput,
    Infeasible,
    InvalidInput,
    NotFound,
    SchemaError,
)
from .harness import (
    AttentionRecord,
    IntraPlan,
    LayerRecord,
    PruneTrace,
    ToyDecoder,
    make_intra_plan,
    run_with_injected_attention,
    run_with_pruning,
    sinusoidal_positions,
)
from .importance import (
    AttentionMap,
    ImportanceScores,
    Selector,
    TdsConfig,
    plain_select,
    prune_count,
    query_importance,
    random_select,
    tds_select,
)
from .intra import (
    AudioSaliency,
    FrameGrid,
    IntraReport,
    apply_intra,
    audio_intra_prune,
    grid_from_embeddings,
    round_half_away,
    video_ttm,
)
from .metrics import (
    CosineHistogram,
    CostReport,
    PairKind,
    cosine_distribution,
    cost_model,
    retention_per_modality,
    top20_recall,
)
from .numerics import Rng, cosine, derive_seed, gaussian, pca2, softmax_row, splitmix64
from .schedule import (
    PruneScheduleConfig,
    RetentionTrace,
    ScheduleKind,
    calibrate_p_final,
    calibrate_p_final_bisection,
    calibrate_p_final_closed_form,
    mean_retention,
    prune_ratio,
    retention_trace,
    sigmoid_value,
)
from .sequence import (
    ChunkSpec,
    InterleavedSequence,
    Modality,
    TokenMeta,
    build_sequence,
    chunk_index_of,
    synth_embeddings,
)

__version__ = "0.1.0"

__all__ = [
    "AttentionMap",
    "AttentionRecord",
    "AudioSaliency",
    "ChunkSpec",
    "ConvergenceFailure",
    "CosineHistogram",
    "CostReport",
    "DegenerateInput",
    "FrameGrid",
    "ImportanceScores",
    "Infeasible",
    "InterleavedSequence",
    "IntraPlan",
    "IntraReport",
    "InvalidInput",
    "LayerRecord",
    "Modality",
    "NotFound",
    "PairKind",
    "PruneScheduleConfig",
    "PruneTrace",
    "RetentionTrace",
    "Rng",
    "ScheduleKind",
    "SchemaError",
    "Selector",
    "TdsConfig",
    "TokenMeta",
    "ToyDecoder",
    "apply_intra",
    "audio_intra_prune",
    "build_sequence",
    "calibrate_p_final",
    "calibrate_p_final_bisection",
    "calibrate_p_final_closed_form",
    "chunk_index_of",
    "cosine",
    "cosine_distribution",
    "cost_model",
    "derive_seed",
    "gaussian",
    "grid_from_embeddings",
    "make_intra_plan",
    "mean_retention",
    "pca2",
    "plain_select",
    "prune_count",
    "prune_ratio",
    "query_importance",
    "random_select",
    "retention_per_modality",
    "retention_trace",
    "round_half_away",
    "run_with_injected_attention",
    "run_with_pruning",
    "sigmoid_value",
    "sinusoidal_positions",
    "softmax_row",
    "splitmix64",
    "synth_embeddings",
    "tds_select",
    "top20_recall",
    "video_ttm",
]
