"""Miniature deterministic decoder-only transformer with explicit KV-cache management.

The model is intentionally tiny and untrained: weights are synthesized from a
seeded splitmix64 stream so that every cache, hidden state, and logit produced
here is bit-reproducible across machines. Architecture: token embedding plus
sinusoidal absolute positions, pre-norm blocks (RMS normalization), grouped-query
attention (H query heads sharing H_kv key/value heads), and a 4x GELU feed-forward.

Numerics: parameters and activations are float32; softmax (attention and output
probabilities) accumulates in float64 before casting back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, ConfigError, DomainError

# Byte-level tokenizer: ids 0..255 are raw bytes, two reserved control ids above.
BYTE_VOCAB = 256
THINK_TOKEN = 256
END_THINK_TOKEN = 257
VOCAB_SIZE = 258

_THINK_TEXT = "<think>"
_END_THINK_TEXT = "</think>"

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def encode_text(text: str) -> list[int]:
    """UTF-8 bytes of `text` as token ids (no control tokens)."""
    return list(text.encode("utf-8"))


def decode_tokens(ids) -> str:
    """Inverse of encode_text; control ids render as their angle-bracket names."""
    parts: list[str] = []
    pending: list[int] = []

    def flush():
        if pending:
            parts.append(bytes(pending).decode("utf-8", errors="replace"))
            pending.clear()

    for i in ids:
        i = int(i)
        if i == THINK_TOKEN:
            flush()
            parts.append(_THINK_TEXT)
        elif i == END_THINK_TOKEN:
            flush()
            parts.append(_END_THINK_TEXT)
        elif 0 <= i < BYTE_VOCAB:
            pending.append(i)
        else:
            raise DomainError(f"token id {i} outside vocabulary of {VOCAB_SIZE}")
    flush()
    return "".join(parts)


def splitmix64(seed: int, count: int, offset: int = 0) -> np.ndarray:
    """Outputs offset..offset+count-1 of the splitmix64 stream for `seed`.

    Element k is mix(seed + (k+1) * GOLDEN) with the standard finalizer, so the
    stream can be generated in slices without materializing earlier outputs.
    """
    if count < 0 or offset < 0:
        raise DomainError("splitmix64 count and offset must be nonnegative")
    base = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    idx = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
    z = (base + idx * _GOLDEN) & _MASK64
    z = ((z ^ (z >> np.uint64(30))) * _MIX1) & _MASK64
    z = ((z ^ (z >> np.uint64(27))) * _MIX2) & _MASK64
    return z ^ (z >> np.uint64(31))


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions and seed of a toy model.

    d_head is derived (d_model / num_heads); num_kv_heads must divide num_heads.
    """

    num_layers: int
    num_heads: int
    num_kv_heads: int
    d_model: int
    vocab_size: int = VOCAB_SIZE
    max_seq_len: int = 128
    seed: int = 0
    d_head: int = field(init=False)

    def __post_init__(self):
        for name in ("num_layers", "num_heads", "num_kv_heads", "d_model", "vocab_size", "max_seq_len"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.num_heads % self.num_kv_heads != 0:
            raise ConfigError(
                f"num_kv_heads ({self.num_kv_heads}) must divide num_heads ({self.num_heads})"
            )
        if self.d_model % self.num_heads != 0:
            raise ConfigError(
                f"num_heads ({self.num_heads}) must divide d_model ({self.d_model})"
            )
        object.__setattr__(self, "d_head", self.d_model // self.num_heads)

    @property
    def group_size(self) -> int:
        return self.num_heads // self.num_kv_heads

    @property
    def kv_dim(self) -> int:
        return self.num_kv_heads * self.d_head


@dataclass(frozen=True)
class LayerWeights:
    attn_norm: np.ndarray  # [d_model]
    wq: np.ndarray  # [d_model, d_model]
    wk: np.ndarray  # [d_model, kv_dim]
    wv: np.ndarray  # [d_model, kv_dim]
    wo: np.ndarray  # [d_model, d_model]
    ffn_norm: np.ndarray  # [d_model]
    ffn_w1: np.ndarray  # [d_model, 4*d_model]
    ffn_w2: np.ndarray  # [4*d_model, d_model]


@dataclass(frozen=True)
class Model:
    config: ModelConfig
    embedding: np.ndarray  # [V, d_model]
    positional: np.ndarray  # [max_seq_len, d_model]
    layers: tuple[LayerWeights, ...]
    final_norm: np.ndarray  # [d_model]
    lm_head: np.ndarray  # [d_model, V]


def sinusoidal_positions(length: int, d_model: int) -> np.ndarray:
    """Absolute sin/cos position table, float32 [length, d_model]."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    dim = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, dim / d_model)
    table = np.zeros((length, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return table.astype(np.float32)


class _WeightStream:
    """Sequential uniform draws in [-scale, scale] from one splitmix64 stream."""

    def __init__(self, seed: int, scale: float):
        self._seed = seed
        self._scale = scale
        self._consumed = 0

    def take(self, *shape: int) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        bits = splitmix64(self._seed, n, self._consumed)
        self._consumed += n
        # 53 high bits -> u in [0,1); map to [-scale, scale)
        u = (bits >> np.uint64(11)).astype(np.float64) * (2.0**-53)
        w = (2.0 * u - 1.0) * self._scale
        return w.reshape(shape).astype(np.float32)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def init_model(config: ModelConfig) -> Model:
    """Synthesize a model whose weights are a pure function of (config, seed).

    All parameters are drawn i.i.d. uniform in [-1/sqrt(d_model), 1/sqrt(d_model)]
    from a single splitmix64 stream seeded with config.seed, consumed row-major in
    this fixed order: embedding [V, d]; then per layer l = 0..L-1: attn_norm [d],
    wq [d, d], wk [d, kv_dim], wv [d, kv_dim], wo [d, d], ffn_norm [d],
    ffn_w1 [d, 4d], ffn_w2 [4d, d]; then final_norm [d]; then lm_head [d, V].
    The sinusoidal position table consumes no stream outputs.
    """
    if not isinstance(config, ModelConfig):
        raise ConfigError("init_model expects a ModelConfig")
    d = config.d_model
    stream = _WeightStream(config.seed, 1.0 / math.sqrt(d))
    embedding = stream.take(config.vocab_size, d)
    layers = []
    for _ in range(config.num_layers):
        layers.append(
            LayerWeights(
                attn_norm=_freeze(stream.take(d)),
                wq=_freeze(stream.take(d, d)),
                wk=_freeze(stream.take(d, config.kv_dim)),
                wv=_freeze(stream.take(d, config.kv_dim)),
                wo=_freeze(stream.take(d, d)),
                ffn_norm=_freeze(stream.take(d)),
                ffn_w1=_freeze(stream.take(d, 4 * d)),
                ffn_w2=_freeze(stream.take(4 * d, d)),
            )
        )
    final_norm = stream.take(d)
    lm_head = stream.take(d, config.vocab_size)
    return Model(
        config=config,
        embedding=_freeze(embedding),
        positional=_freeze(sinusoidal_positions(config.max_seq_len, d)),
        layers=tuple(layers),
        final_norm=_freeze(final_norm),
        lm_head=_freeze(lm_head),
    )


class KVCache:
    """Append-only per-layer store of attention keys and values.

    Layer l holds K^(l), V^(l) of shape [t, num_kv_heads, d_head] float32 where
    t is shared by all layers. Buffers are preallocated to `capacity`; positions
    below current_len are never rewritten.
    """

    def __init__(self, num_layers: int, num_kv_heads: int, d_head: int, capacity: int):
        if min(num_layers, num_kv_heads, d_head, capacity) < 1:
            raise ConfigError("KVCache dimensions and capacity must be >= 1")
        self._k = [np.zeros((capacity, num_kv_heads, d_head), dtype=np.float32) for _ in range(num_layers)]
        self._v = [np.zeros((capacity, num_kv_heads, d_head), dtype=np.float32) for _ in range(num_layers)]
        self._len = 0

    @classmethod
    def for_model(cls, config: ModelConfig) -> "KVCache":
        return cls(config.num_layers, config.num_kv_heads, config.d_head, config.max_seq_len)

    @classmethod
    def from_arrays(cls, keys, values, capacity: int | None = None) -> "KVCache":
        """Build a cache from per-layer [t, H_kv, d_head] arrays (copied)."""
        keys = [np.asarray(k, dtype=np.float32) for k in keys]
        values = [np.asarray(v, dtype=np.float32) for v in values]
        if len(keys) == 0 or len(keys) != len(values):
            raise DomainError("keys and values must be nonempty per-layer lists of equal length")
        shape = keys[0].shape
        if len(shape) != 3:
            raise DomainError(f"per-layer tensors must be rank 3 [t, H_kv, d_head], got {shape}")
        for arr in list(keys) + list(values):
            if arr.shape != shape:
                raise DomainError(f"all layers must share shape {shape}, got {arr.shape}")
        t, h_kv, d_head = shape
        cap = t if capacity is None else capacity
        if cap < t:
            raise CapacityError(f"capacity {cap} smaller than provided length {t}")
        cache = cls(len(keys), h_kv, d_head, cap)
        cache._write_block(keys, values)
        return cache

    @property
    def num_layers(self) -> int:
        return len(self._k)

    @property
    def num_kv_heads(self) -> int:
        return self._k[0].shape[1]

    @property
    def d_head(self) -> int:
        return self._k[0].shape[2]

    @property
    def capacity(self) -> int:
        return self._k[0].shape[0]

    @property
    def current_len(self) -> int:
        return self._len

    def keys(self, layer: int) -> np.ndarray:
        """Read-only view of K^(layer), shape [current_len, H_kv, d_head]."""
        view = self._k[layer][: self._len]
        view.setflags(write=False)
        return view

    def values(self, layer: int) -> np.ndarray:
        view = self._v[layer][: self._len]
        view.setflags(write=False)
        return view

    def append(self, k_step: np.ndarray, v_step: np.ndarray) -> None:
        """Append one position across all layers; k_step/v_step are [L, H_kv, d_head]."""
        if self._len >= self.capacity:
            raise CapacityError(f"cache full at capacity {self.capacity}")
        k_step = np.asarray(k_step, dtype=np.float32)
        v_step = np.asarray(v_step, dtype=np.float32)
        want = (self.num_layers, self.num_kv_heads, self.d_head)
        if k_step.shape != want or v_step.shape != want:
            raise DomainError(f"append expects shape {want}, got {k_step.shape} / {v_step.shape}")
        t = self._len
        for l in range(self.num_layers):
            self._k[l][t] = k_step[l]
            self._v[l][t] = v_step[l]
        self._len = t + 1

    def _write_block(self, keys, values) -> None:
        # Internal bulk write used by prefill/from_arrays; respects append-only
        # because it only ever runs on an empty cache.
        t = keys[0].shape[0]
        if self._len != 0:
            raise CapacityError("bulk write only permitted on an empty cache")
        if t > self.capacity:
            raise CapacityError(f"block of length {t} exceeds capacity {self.capacity}")
        for l in range(self.num_layers):
            self._k[l][:t] = keys[l]
            self._v[l][:t] = values[l]
        self._len = t


@dataclass
class ForwardRecord:
    """Per-position outputs of one forward pass over a token span.

    hidden_states[0] is the embedding-layer output (token embedding + position);
    hidden_states[l] for l >= 1 is the residual stream after block l.
    token_logprobs[i] is the float64 log-probability of tokens[i+1] given the
    prefix, so a span of t tokens yields t-1 entries.
    """

    logits: np.ndarray  # float32 [t, V]
    hidden_states: np.ndarray  # float32 [L+1, t, d_model]
    token_logprobs: np.ndarray  # float64 [t-1]


@dataclass(frozen=True)
class MemoryReport:
    kv_bytes: int
    hidden_bytes: int
    context_len: int
    dtype_bytes: int


def _rms_norm(x: np.ndarray, gain: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    ms = np.mean(np.square(x, dtype=np.float64), axis=-1, keepdims=True)
    return ((x / np.sqrt(ms + eps)) * gain).astype(np.float32)


def _gelu(x: np.ndarray) -> np.ndarray:
    x64 = x.astype(np.float64)
    inner = math.sqrt(2.0 / math.pi) * (x64 + 0.044715 * x64**3)
    return (0.5 * x64 * (1.0 + np.tanh(inner))).astype(np.float32)


def softmax_f64(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with float64 accumulation; returns float64."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax_f64(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def _check_tokens(config: ModelConfig, tokens) -> np.ndarray:
    ids = np.asarray(list(tokens), dtype=np.int64)
    if ids.size == 0:
        raise DomainError("token sequence must be nonempty")
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        bad = int(ids[(ids < 0) | (ids >= config.vocab_size)][0])
        raise DomainError(f"token id {bad} outside vocabulary of {config.vocab_size}")
    return ids


def _attend_full(q: np.ndarray, k: np.ndarray, v: np.ndarray, group: int) -> np.ndarray:
    """Causal attention over a whole span.

    q: [t, H, d_head]; k, v: [t, H_kv, d_head]. Scores in float32, probabilities
    and the weighted sum in float64, result cast to float32 [t, H*d_head].
    """
    t, h, d_head = q.shape
    kf = np.repeat(k, group, axis=1)  # [t, H, d_head]
    vf = np.repeat(v, group, axis=1)
    scores = np.einsum("qhd,khd->hqk", q, kf) / np.float32(math.sqrt(d_head))
    mask = np.triu(np.ones((t, t), dtype=bool), k=1)
    scores = np.where(mask[None, :, :], np.float32(-np.inf), scores)
    probs = softmax_f64(scores)  # [H, t, t]
    ctx = np.einsum("hqk,khd->qhd", probs, vf.astype(np.float64))
    return ctx.reshape(t, h * d_head).astype(np.float32)


def _attend_one(q: np.ndarray, k: np.ndarray, v: np.ndarray, group: int) -> np.ndarray:
    """Attention for a single query over all cached positions (no mask needed)."""
    h, d_head = q.shape
    kf = np.repeat(k, group, axis=1)  # [s, H, d_head]
    vf = np.repeat(v, group, axis=1)
    scores = np.einsum("hd,shd->hs", q, kf) / np.float32(math.sqrt(d_head))
    probs = softmax_f64(scores)  # [H, s]
    ctx = np.einsum("hs,shd->hd", probs, vf.astype(np.float64))
    return ctx.reshape(h * d_head).astype(np.float32)


def _forward_span(model: Model, ids: np.ndarray, cache: KVCache | None):
    """Shared full-span forward; optionally records K/V into an empty cache."""
    cfg = model.config
    t = ids.shape[0]
    h = model.embedding[ids] + model.positional[:t]
    hiddens = [h.copy()]
    k_layers, v_layers = [], []
    for lw in model.layers:
        xn = _rms_norm(h, lw.attn_norm)
        q = (xn @ lw.wq).reshape(t, cfg.num_heads, cfg.d_head)
        k = (xn @ lw.wk).reshape(t, cfg.num_kv_heads, cfg.d_head)
        v = (xn @ lw.wv).reshape(t, cfg.num_kv_heads, cfg.d_head)
        if cache is not None:
            k_layers.append(k)
            v_layers.append(v)
        ctx = _attend_full(q, k, v, cfg.group_size)
        h = h + ctx @ lw.wo
        xn2 = _rms_norm(h, lw.ffn_norm)
        h = h + _gelu(xn2 @ lw.ffn_w1) @ lw.ffn_w2
        hiddens.append(h.copy())
    if cache is not None:
        cache._write_block(k_layers, v_layers)
    logits = _rms_norm(h, model.final_norm) @ model.lm_head
    if t > 1:
        rows = log_softmax_f64(logits[:-1])
        logprobs = rows[np.arange(t - 1), ids[1:]]
    else:
        logprobs = np.zeros(0, dtype=np.float64)
    return ForwardRecord(
        logits=logits.astype(np.float32),
        hidden_states=np.stack(hiddens).astype(np.float32),
        token_logprobs=logprobs,
    )


def full_forward(model: Model, tokens) -> ForwardRecord:
    """Causal forward over the whole sequence without any cache (the reference path)."""
    ids = _check_tokens(model.config, tokens)
    if ids.shape[0] > model.config.max_seq_len:
        raise CapacityError(
            f"sequence of length {ids.shape[0]} exceeds max_seq_len {model.config.max_seq_len}"
        )
    return _forward_span(model, ids, cache=None)


def prefill(model: Model, tokens) -> tuple[KVCache, ForwardRecord]:
    """Forward the prompt once, recording per-layer K/V for later decode steps."""
    ids = _check_tokens(model.config, tokens)
    if ids.shape[0] > model.config.max_seq_len:
        raise CapacityError(
            f"sequence of length {ids.shape[0]} exceeds max_seq_len {model.config.max_seq_len}"
        )
    cache = KVCache.for_model(model.config)
    record = _forward_span(model, ids, cache=cache)
    return cache, record


def decode_step(model: Model, cache: KVCache, token: int) -> tuple[np.ndarray, np.ndarray]:
    """Advance one token using cached K/V only.

    Appends exactly one position to every layer of `cache` and returns
    (logits_row [V] float32, hidden_column [L+1, d_model] float32) for the new
    position. Attention touches the new token's K/V plus the cache, never the
    earlier hidden states, which is the whole point of keeping the cache.
    """
    cfg = model.config
    if cache.current_len >= cache.capacity:
        raise CapacityError(f"cache full at capacity {cache.capacity}")
    if cache.current_len >= cfg.max_seq_len:
        raise CapacityError(f"cache already at max_seq_len {cfg.max_seq_len}")
    tok = int(token)
    if tok < 0 or tok >= cfg.vocab_size:
        raise DomainError(f"token id {tok} outside vocabulary of {cfg.vocab_size}")

    pos = cache.current_len
    h = model.embedding[tok] + model.positional[pos]
    hiddens = [h.copy()]
    k_rows = np.empty((cfg.num_layers, cfg.num_kv_heads, cfg.d_head), dtype=np.float32)
    v_rows = np.empty_like(k_rows)
    for l, lw in enumerate(model.layers):
        xn = _rms_norm(h, lw.attn_norm)
        q = (xn @ lw.wq).reshape(cfg.num_heads, cfg.d_head)
        k_new = (xn @ lw.wk).reshape(cfg.num_kv_heads, cfg.d_head)
        v_new = (xn @ lw.wv).reshape(cfg.num_kv_heads, cfg.d_head)
        k_rows[l] = k_new
        v_rows[l] = v_new
        k_all = np.concatenate([cache.keys(l), k_new[None]], axis=0)
        v_all = np.concatenate([cache.values(l), v_new[None]], axis=0)
        ctx = _attend_one(q, k_all, v_all, cfg.group_size)
        h = h + ctx @ lw.wo
        xn2 = _rms_norm(h, lw.ffn_norm)
        h = h + _gelu(xn2 @ lw.ffn_w1) @ lw.ffn_w2
        hiddens.append(h.copy())
    cache.append(k_rows, v_rows)
    logits_row = (_rms_norm(h, model.final_norm) @ model.lm_head).astype(np.float32)
    return logits_row, np.stack(hiddens).astype(np.float32)


@dataclass
class GreedySampler:
    """Deterministic argmax sampling (ties resolve to the lowest token id)."""

    def select(self, logits_row: np.ndarray) -> int:
        return int(np.argmax(logits_row))


@dataclass
class TemperatureSampler:
    """Seeded categorical sampling from softmax(logits / temperature)."""

    temperature: float
    seed: int = 0

    def __post_init__(self):
        if not (self.temperature > 0.0):
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        self._rng = np.random.default_rng(self.seed)

    def select(self, logits_row: np.ndarray) -> int:
        probs = softmax_f64(np.asarray(logits_row, dtype=np.float64) / self.temperature)
        probs = probs / probs.sum()
        return int(self._rng.choice(probs.shape[0], p=probs))


@dataclass(frozen=True)
class StopRule:
    max_new_tokens: int
    stop_tokens: frozenset = frozenset()

    def __post_init__(self):
        if self.max_new_tokens < 0:
            raise ConfigError("max_new_tokens must be >= 0")
        object.__setattr__(self, "stop_tokens", frozenset(int(t) for t in self.stop_tokens))


def generate(model: Model, prompt, sampler=None, stop: StopRule | None = None):
    """Prefill the prompt then decode until a stop token, max_new_tokens, or capacity.

    Returns (tokens, cache, record) where tokens = prompt ++ generated, the cache
    covers every returned token, and the record's logits/hidden/logprobs span the
    same positions. Greedy sampling (the default) is fully deterministic; a
    TemperatureSampler is deterministic per its seed. Generation stops quietly
    when the cache reaches capacity before max_new_tokens is exhausted.
    """
    if sampler is None:
        sampler = GreedySampler()
    if stop is None:
        stop = StopRule(max_new_tokens=16)
    cache, record = prefill(model, prompt)
    tokens = [int(t) for t in prompt]
    logit_rows = [record.logits]
    hidden_cols = [record.hidden_states]
    logprobs = list(record.token_logprobs)
    last_row = record.logits[-1]
    for _ in range(stop.max_new_tokens):
        if cache.current_len >= cache.capacity:
            break
        tok = sampler.select(last_row)
        logprobs.append(float(log_softmax_f64(last_row)[tok]))
        row, hid = decode_step(model, cache, tok)
        tokens.append(tok)
        logit_rows.append(row[None, :])
        hidden_cols.append(hid[:, None, :])
        last_row = row
        if tok in stop.stop_tokens:
            break
    full_record = ForwardRecord(
        logits=np.concatenate(logit_rows, axis=0),
        hidden_states=np.concatenate(hidden_cols, axis=1),
        token_logprobs=np.asarray(logprobs, dtype=np.float64),
    )
    return tokens, cache, full_record


def estimate_memory(config: ModelConfig, context_len: int, dtype_bytes: int = 4) -> MemoryReport:
    """Closed-form byte counts for the cache and the full hidden-state stack.

    kv_bytes = 2 * L * H_kv * d_head * context_len * dtype_bytes
    hidden_bytes = (L + 1) * d_model * context_len * dtype_bytes
    """
    if context_len < 0:
        raise DomainError("context_len must be >= 0")
    if dtype_bytes < 1:
        raise DomainError("dtype_bytes must be >= 1")
    kv = 2 * config.num_layers * config.num_kv_heads * config.d_head * context_len * dtype_bytes
    hidden = (config.num_layers + 1) * config.d_model * context_len * dtype_bytes
    return MemoryReport(kv_bytes=kv, hidden_bytes=hidden, context_len=context_len, dtype_bytes=dtype_bytes)
