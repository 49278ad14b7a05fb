"""KV-cache representations toolkit.

A deterministic toy decoder-only transformer with explicit KV-cache management,
pooling of caches and hidden states into fixed-size representations, trajectory
confidence scores with separation metrics, an MLP difficulty estimator, a
fast/slow thinking switch controller driven by cache readouts, and a binary
trace container tying the pieces together on disk.
"""

from .coescore import (
    AXIS_NA,
    HIGHER_IS_CORRECT,
    LOWER_IS_CORRECT,
    METHOD_COE_C,
    METHOD_COE_R,
    METHOD_ENTROPY,
    METHOD_MAXPROB,
    METHOD_PPL,
    CoEWeights,
    ConfidenceScore,
    StepDeltas,
    coe_c,
    coe_r,
    format_score_line,
    kv_coe,
    parse_score_line,
    score_baseline,
    step_deltas,
)
from .difficulty import (
    DifficultyEstimator,
    DifficultyLabel,
    MLPParams,
    TrainConfig,
    assign_label,
    estimator_from_tensors,
    estimator_tensors,
    fit_estimator,
    init_params,
    mlp_forward,
    mlp_loss_and_grad,
    mlp_train,
)
from .errors import (
    BadMagicError,
    CapacityError,
    ConfigError,
    DegenerateInputError,
    DomainError,
    KvrepError,
    OverlappingTensorsError,
    TraceFormatError,
    TrajectoryTooShortError,
    TruncatedTraceError,
    UnsupportedVersionError,
    UsageError,
)
from .kvpool import (
    AXIS_LAYER,
    AXIS_TOKEN,
    PoolingSpec,
    Trajectory,
    apply_pooling,
    evenly_spaced_layers,
    format_pooling_spec,
    parse_pooling_spec,
    pool_classifier_features,
    pool_layer_trajectory,
    pool_sentence,
    pool_token_trajectory,
    random_embedding,
)
from .metrics import ScoredSet, aupr, auroc, fpr_at_95_tpr, roc_points
from .minitx import (
    END_THINK_TOKEN,
    THINK_TOKEN,
    VOCAB_SIZE,
    ForwardRecord,
    GreedySampler,
    KVCache,
    MemoryReport,
    Model,
    ModelConfig,
    StopRule,
    TemperatureSampler,
    decode_step,
    decode_tokens,
    encode_text,
    estimate_memory,
    full_forward,
    generate,
    init_model,
    prefill,
    splitmix64,
)
from .switcher import (
    ACTION_INJECT_END_THINK,
    ACTION_INJECT_THINK,
    ACTION_NONE,
    ACTION_START_FAST,
    ACTION_START_SLOW,
    MODE_CLASSIFICATION,
    MODE_FAST,
    MODE_GENERATIVE,
    MODE_SLOW,
    PromptTemplate,
    SwitchConfig,
    SwitchEvent,
    SwitchTranscript,
    checkpoint_decision,
    grade_answer,
    initial_decision,
    run_controlled_generation,
    run_plain_mode,
)
from .traceio import (
    TraceFile,
    cache_from_trace,
    cache_to_trace,
    parse_trace,
    read_trace,
    record_from_trace,
    record_to_tensors,
    trace_bytes,
    validate_trace,
    write_trace,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
