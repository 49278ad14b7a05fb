"""Export KV caches, hidden states, and logprobs from pretrained causal LMs
to KVTRACE containers, plus fast/slow labeled difficulty datasets.

The only coupling to the core toolkit is the byte format itself, specified
in docs/kvtrace.md; this package carries its own writer and reader.
"""

from .capture import CaptureError, StepCapture, greedy_capture, load_checkpoint, model_dims
from .export import (
    CAPTURE_HIDDEN,
    CAPTURE_KINDS,
    CAPTURE_KV,
    CAPTURE_LOGPROBS,
    DEFAULT_FAST_WRAPPER,
    DEFAULT_SLOW_WRAPPER,
    PAIR_POOLING,
    SHORT_FAST_LIMIT,
    ExportError,
    ExportSpec,
    difficulty_label,
    export_fastslow_pairs,
    export_traces,
    extract_answer,
    normalize_answer,
    pool_prompt_features,
    read_golds,
    read_prompts,
    shard_items,
)
from .wire import (
    MAGIC,
    VERSION,
    WireFormatError,
    parse_trace_bytes,
    read_trace_file,
    serialize_trace,
    write_trace_file,
)

__version__ = "0.1.0"

__all__ = [
    "CAPTURE_HIDDEN",
    "CAPTURE_KINDS",
    "CAPTURE_KV",
    "CAPTURE_LOGPROBS",
    "CaptureError",
    "DEFAULT_FAST_WRAPPER",
    "DEFAULT_SLOW_WRAPPER",
    "ExportError",
    "ExportSpec",
    "MAGIC",
    "PAIR_POOLING",
    "SHORT_FAST_LIMIT",
    "StepCapture",
    "VERSION",
    "WireFormatError",
    "difficulty_label",
    "export_fastslow_pairs",
    "export_traces",
    "extract_answer",
    "greedy_capture",
    "load_checkpoint",
    "model_dims",
    "normalize_answer",
    "parse_trace_bytes",
    "pool_prompt_features",
    "read_golds",
    "read_prompts",
    "read_trace_file",
    "serialize_trace",
    "shard_items",
    "write_trace_file",
]
