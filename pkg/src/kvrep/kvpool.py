"""Pooling recipes that turn a KV cache (or hidden states) into embeddings.

A PoolingSpec names, axis by axis, how tensors collapse into points:

  source        values-only ("v"), keys-and-values ("kv"), or hidden states
  head_agg      concatenate heads (default) or mean across heads
  position_agg  per-token (keep the token axis), mean over all, or sum of the
                last k positions
  layer_agg     mean over a selected layer set (default all) or per-layer
                (keep the layer axis)
  normalize     none or unit l2

Exactly one axis may stay free: per-token yields a token-axis trajectory,
per-layer a layer-axis trajectory, and aggregating both yields a single vector.
For keys-and-values sources the K block of every head precedes the V block
(all K heads first, then all V heads), flattened row-major, and the layer mean
is applied after flattening. All arithmetic is float64 regardless of input dtype.
"""

from __future__ import annotations

from dataclasses import dataclass
import re

import numpy as np

from .errors import ConfigError, DegenerateInputError, DomainError, TrajectoryTooShortError
from .minitx import ForwardRecord, KVCache

SOURCE_VALUES = "v"
SOURCE_KV = "kv"
SOURCE_HIDDEN = "hidden"
HEAD_CONCAT = "concat"
HEAD_MEAN = "headmean"
POS_PER_TOKEN = "pertoken"
POS_MEAN_ALL = "meanall"
POS_SUM_LAST = "sumlast"
LAYER_MEAN = "layermean"
LAYER_PER = "perlayer"
NORM_NONE = "none"
NORM_L2 = "l2"

AXIS_TOKEN = "token"
AXIS_LAYER = "layer"


@dataclass(frozen=True)
class PoolingSpec:
    source: str = SOURCE_KV
    head_agg: str = HEAD_CONCAT
    position_agg: str = POS_MEAN_ALL
    last_k: int | None = None
    layer_agg: str = LAYER_MEAN
    layers: tuple | None = None  # None = all layers of the input
    normalize: str = NORM_NONE

    def __post_init__(self):
        if self.source not in (SOURCE_VALUES, SOURCE_KV, SOURCE_HIDDEN):
            raise ConfigError(f"unknown pooling source {self.source!r}")
        if self.head_agg not in (HEAD_CONCAT, HEAD_MEAN):
            raise ConfigError(f"unknown head aggregation {self.head_agg!r}")
        if self.position_agg not in (POS_PER_TOKEN, POS_MEAN_ALL, POS_SUM_LAST):
            raise ConfigError(f"unknown position aggregation {self.position_agg!r}")
        if self.layer_agg not in (LAYER_MEAN, LAYER_PER):
            raise ConfigError(f"unknown layer aggregation {self.layer_agg!r}")
        if self.normalize not in (NORM_NONE, NORM_L2):
            raise ConfigError(f"unknown normalization {self.normalize!r}")
        if self.position_agg == POS_SUM_LAST:
            if self.last_k is None or int(self.last_k) < 1:
                raise ConfigError("sum-last-k pooling requires k >= 1")
            object.__setattr__(self, "last_k", int(self.last_k))
        elif self.last_k is not None:
            raise ConfigError("last_k only applies to sum-last-k position aggregation")
        if self.position_agg == POS_PER_TOKEN and self.layer_agg == LAYER_PER:
            raise ConfigError("per-token and per-layer are mutually exclusive (one free axis)")
        if self.layers is not None:
            layers = tuple(int(l) for l in self.layers)
            if len(layers) == 0:
                raise ConfigError("layer set must be nonempty")
            if len(set(layers)) != len(layers):
                raise ConfigError(f"layer set contains duplicates: {layers}")
            if min(layers) < 0:
                raise ConfigError(f"layer indices must be nonnegative: {layers}")
            object.__setattr__(self, "layers", layers)

    @property
    def is_vector(self) -> bool:
        """True when both axes are aggregated and pooling yields one vector."""
        return self.position_agg != POS_PER_TOKEN and self.layer_agg != LAYER_PER

    @property
    def free_axis(self) -> str | None:
        if self.position_agg == POS_PER_TOKEN:
            return AXIS_TOKEN
        if self.layer_agg == LAYER_PER:
            return AXIS_LAYER
        return None


def format_pooling_spec(spec: PoolingSpec) -> str:
    """Canonical text form, e.g. `kv:concat:sumlast128:layers=17,35:nonorm`."""
    if spec.position_agg == POS_SUM_LAST:
        pos = f"sumlast{spec.last_k}"
    else:
        pos = spec.position_agg
    layer_list = "all" if spec.layers is None else ",".join(str(l) for l in spec.layers)
    if spec.layer_agg == LAYER_PER:
        layer = "perlayer" if spec.layers is None else f"perlayer={layer_list}"
    else:
        layer = f"layers={layer_list}"
    norm = "nonorm" if spec.normalize == NORM_NONE else spec.normalize
    return ":".join([spec.source, spec.head_agg, pos, layer, norm])


def parse_pooling_spec(text: str) -> PoolingSpec:
    """Inverse of format_pooling_spec; raises ConfigError on malformed input."""
    parts = text.strip().split(":")
    if len(parts) != 5:
        raise ConfigError(f"pooling spec needs 5 colon-separated fields, got {text!r}")
    source, head, pos, layer, norm = parts
    last_k = None
    if pos.startswith(POS_SUM_LAST):
        m = re.fullmatch(r"sumlast(\d+)", pos)
        if not m:
            raise ConfigError(f"malformed sum-last field {pos!r}")
        last_k = int(m.group(1))
        pos = POS_SUM_LAST
    if layer == "perlayer":
        layer_agg, layers = LAYER_PER, None
    elif layer.startswith("perlayer="):
        layer_agg, layers = LAYER_PER, _parse_layer_list(layer[len("perlayer="):])
    elif layer.startswith("layers="):
        layer_agg, layers = LAYER_MEAN, _parse_layer_list(layer[len("layers="):])
    else:
        raise ConfigError(f"malformed layer field {layer!r}")
    if norm == "nonorm":
        norm = NORM_NONE
    return PoolingSpec(
        source=source,
        head_agg=head,
        position_agg=pos,
        last_k=last_k,
        layer_agg=layer_agg,
        layers=layers,
        normalize=norm,
    )


def _parse_layer_list(text: str):
    if text == "all":
        return None
    try:
        return tuple(int(p) for p in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"malformed layer list {text!r}") from exc


@dataclass
class Trajectory:
    """Ordered embedding points along one free axis (token positions or layers)."""

    axis: str
    points: np.ndarray  # float64 [n_points, dim]

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[0] < 1:
            raise DomainError(f"trajectory points must be a nonempty [n, dim] array, got {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise DomainError("trajectory points must be finite")
        if self.axis not in (AXIS_TOKEN, AXIS_LAYER):
            raise DomainError(f"unknown trajectory axis {self.axis!r}")

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def _resolve_layers(spec: PoolingSpec, available: int) -> tuple:
    layers = tuple(range(available)) if spec.layers is None else spec.layers
    for l in layers:
        if l >= available:
            raise ConfigError(f"layer index {l} out of range for {available} available layers")
    return layers


def _layer_feature_stack(obj, spec: PoolingSpec) -> np.ndarray:
    """Collapse heads and assemble the [n_layers, t, dim] float64 stack."""
    if spec.source == SOURCE_HIDDEN:
        if isinstance(obj, ForwardRecord):
            arr = obj.hidden_states
        else:
            arr = np.asarray(obj)
        if arr.ndim != 3:
            raise DomainError(f"hidden-state input must be [L+1, t, d_model], got shape {arr.shape}")
        layers = _resolve_layers(spec, arr.shape[0])
        return arr[list(layers)].astype(np.float64)

    if not isinstance(obj, KVCache):
        raise DomainError(f"cache-sourced pooling expects a KVCache, got {type(obj).__name__}")
    if obj.current_len < 1:
        raise DomainError("cannot pool an empty cache")
    layers = _resolve_layers(spec, obj.num_layers)
    per_layer = []
    for l in layers:
        k = obj.keys(l).astype(np.float64)  # [t, H_kv, d_head]
        v = obj.values(l).astype(np.float64)
        if spec.head_agg == HEAD_MEAN:
            k = k.mean(axis=1)  # [t, d_head]
            v = v.mean(axis=1)
        else:
            k = k.reshape(k.shape[0], -1)  # [t, H_kv*d_head], K heads in head order
            v = v.reshape(v.shape[0], -1)
        if spec.source == SOURCE_VALUES:
            per_layer.append(v)
        else:
            per_layer.append(np.concatenate([k, v], axis=1))  # K block then V block
    return np.stack(per_layer)


def _normalize_rows(arr: np.ndarray, spec: PoolingSpec) -> np.ndarray:
    if spec.normalize == NORM_NONE:
        return arr
    flat = arr if arr.ndim == 2 else arr[None, :]
    norms = np.linalg.norm(flat, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateInputError("cannot l2-normalize a zero vector")
    out = flat / norms[:, None]
    return out if arr.ndim == 2 else out[0]


def apply_pooling(obj, spec: PoolingSpec) -> np.ndarray:
    """Generic engine behind the typed pooling ops.

    Returns float64 [dim] when both axes aggregate, [t, dim] for per-token, or
    [n_layers, dim] for per-layer.
    """
    stack = _layer_feature_stack(obj, spec)  # [n_layers, t, dim]
    if spec.layer_agg == LAYER_MEAN:
        stack = stack.mean(axis=0)  # [t, dim]
    if spec.position_agg == POS_PER_TOKEN:
        out = stack
    elif spec.position_agg == POS_MEAN_ALL:
        out = stack.mean(axis=-2)
    else:
        k = min(spec.last_k, stack.shape[-2])
        out = stack[..., -k:, :].sum(axis=-2)
    return _normalize_rows(out, spec)


def pool_sentence(cache: KVCache, spec: PoolingSpec | None = None) -> np.ndarray:
    """One unit-norm vector per cache: mean over positions and layers, then l2.

    The default concatenates heads (dim 2*H_kv*d_head); head_agg="headmean"
    averages across heads first (dim 2*d_head).
    """
    if spec is None:
        spec = PoolingSpec(source=SOURCE_KV, normalize=NORM_L2)
    if spec.position_agg != POS_MEAN_ALL or spec.layer_agg != LAYER_MEAN:
        raise ConfigError("sentence pooling is mean over all positions and selected layers")
    if spec.normalize != NORM_L2:
        raise ConfigError("sentence pooling requires unit-l2 normalization")
    return apply_pooling(cache, spec)


def pool_token_trajectory(cache: KVCache, spec: PoolingSpec | None = None) -> Trajectory:
    """One point per token position: e_t = mean over selected layers of the
    flattened per-token K/V (values-only by default)."""
    if spec is None:
        spec = PoolingSpec(source=SOURCE_VALUES, position_agg=POS_PER_TOKEN)
    if spec.position_agg != POS_PER_TOKEN:
        raise ConfigError("token trajectories require per-token position aggregation")
    if isinstance(cache, KVCache) and cache.current_len < 2:
        raise TrajectoryTooShortError(
            f"token trajectory needs >= 2 cached positions, have {cache.current_len}"
        )
    points = apply_pooling(cache, spec)
    if points.shape[0] < 2:
        raise TrajectoryTooShortError(f"token trajectory needs >= 2 positions, have {points.shape[0]}")
    return Trajectory(axis=AXIS_TOKEN, points=points)


def pool_layer_trajectory(obj, spec: PoolingSpec | None = None) -> Trajectory:
    """One point per selected layer.

    Hidden-state mode averages h_l over the sequence (layer 0 = embedding output
    included); cache mode averages the flattened K/V over token positions.
    """
    if spec is None:
        source = SOURCE_HIDDEN if not isinstance(obj, KVCache) else SOURCE_KV
        spec = PoolingSpec(source=source, layer_agg=LAYER_PER)
    if spec.layer_agg != LAYER_PER:
        raise ConfigError("layer trajectories require per-layer aggregation")
    points = apply_pooling(obj, spec)
    if points.shape[0] < 2:
        raise TrajectoryTooShortError(f"layer trajectory needs >= 2 layers, have {points.shape[0]}")
    return Trajectory(axis=AXIS_LAYER, points=points)


def pool_classifier_features(cache: KVCache, spec: PoolingSpec | None = None) -> np.ndarray:
    """Unnormalized feature vector for the difficulty estimator: K and V
    concatenated per head, summed over the last k positions (all positions when
    the sequence is shorter than k), averaged over the selected layers."""
    if spec is None:
        spec = PoolingSpec(source=SOURCE_KV, position_agg=POS_SUM_LAST, last_k=64)
    if not spec.is_vector:
        raise ConfigError("classifier features must aggregate both axes to one vector")
    if spec.normalize != NORM_NONE:
        raise ConfigError("classifier features are unnormalized by definition")
    return apply_pooling(cache, spec)


def evenly_spaced_layers(num_layers: int, count: int) -> tuple:
    """`count` evenly spaced zero-based layer indices ending at the final layer.

    For 36 layers and count 2 this selects (17, 35).
    """
    if count < 1 or count > num_layers:
        raise ConfigError(f"cannot pick {count} layers from {num_layers}")
    return tuple((i + 1) * num_layers // count - 1 for i in range(count))


def random_embedding(dim: int, seed: int) -> np.ndarray:
    """Seeded i.i.d. standard-normal vector, the no-information reference embedding."""
    if dim < 1:
        raise DomainError(f"embedding dim must be >= 1, got {dim}")
    return np.random.default_rng(seed).standard_normal(dim)
