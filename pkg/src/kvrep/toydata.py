"""Deterministic desk-scale corpora for exercising the scoring and switching paths.

Three generators live here:

  coe_corpus            "smooth vs erratic" caches from a byte-continuation toy
                        model whose greedy next token always repeats the last
                        byte. Low-temperature decoding therefore settles into a
                        repetitive continuation whose per-token cache trajectory
                        takes small, aligned steps (a small seeded perturbation
                        is added to the stored tensors so smooth steps wiggle
                        instead of collapsing to zero); high-temperature decoding
                        jumps around the vocabulary and produces erratic
                        trajectories. Smooth traces are labeled correct, erratic
                        ones incorrect. This is a synthetic, parameterized
                        construction for validating discriminative wiring, not a
                        claim about any real model's separability.

  difficulty_corpus     caches whose prompts come from per-label byte ranges, so
                        pooled features are linearly separable by difficulty
                        label; used by the difficulty-training CLI path.

  build_switching_workload
                        a hand-scripted model whose next-token behavior is a
                        position-independent lookup table (residual stream =
                        embedding + position only, attention and FFN outputs
                        zeroed by construction), plus an MLP difficulty oracle
                        trained on three cache populations. Easy prompts answer
                        immediately after an empty thinking block; slow thinking
                        emits filler tokens forever, so mode choice dominates
                        token cost. The scripted automaton always answers the
                        same byte, which easy prompts share as gold and hard
                        prompts do not: no mode answers hard episodes correctly,
                        mirroring a regime where down-switching saves tokens at
                        zero accuracy cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .difficulty import DifficultyEstimator, TrainConfig, fit_estimator
from .errors import ConfigError, DomainError
from .kvpool import PoolingSpec, POS_SUM_LAST, SOURCE_KV
from .minitx import (
    END_THINK_TOKEN,
    KVCache,
    Model,
    ModelConfig,
    ForwardRecord,
    LayerWeights,
    StopRule,
    TemperatureSampler,
    THINK_TOKEN,
    VOCAB_SIZE,
    _rms_norm,
    generate,
    prefill,
    sinusoidal_positions,
)
from .switcher import SwitchConfig, PromptTemplate

FILLER_TOKEN = 46  # "."
ANSWER_TOKEN = 65  # "A"
HARD_GOLD_TOKEN = 66  # "B"
EOS_TOKEN = 0
_NEWLINE = 10

EASY_BYTES = (97, 109)  # prompts drawn from "a".."m"
HARD_BYTES = (110, 122)  # prompts drawn from "n".."z"

# Next-token lookup realized by the scripted model: newline or any thinking
# context emits filler, closing the thinking block emits the answer byte, and
# the answer byte emits EOS.
SWITCH_SCRIPT = {
    _NEWLINE: FILLER_TOKEN,
    FILLER_TOKEN: FILLER_TOKEN,
    THINK_TOKEN: FILLER_TOKEN,
    END_THINK_TOKEN: ANSWER_TOKEN,
    ANSWER_TOKEN: EOS_TOKEN,
}


@dataclass
class CoeTrace:
    trace_id: str
    tokens: list
    cache: KVCache
    record: ForwardRecord
    correct: bool


def coe_model(seed: int = 0) -> Model:
    """Byte-continuation toy model: the greedy next token repeats the last byte."""
    config = ModelConfig(num_layers=2, num_heads=4, num_kv_heads=2, d_model=32, max_seq_len=64, seed=seed)
    return scripted_model(config, {b: b for b in range(256)}, seed=seed, emb_scale=64.0)


def _perturbed_cache(cache: KVCache, rng, scale: float) -> KVCache:
    keys, values = [], []
    for l in range(cache.num_layers):
        for dest, src in ((keys, cache.keys(l)), (values, cache.values(l))):
            arr = np.asarray(src, dtype=np.float64)
            sigma = scale * float(np.sqrt(np.mean(arr**2)))
            dest.append((arr + rng.normal(0.0, sigma, size=arr.shape)).astype(np.float32))
    return KVCache.from_arrays(keys, values)


def _perturbed_record(record: ForwardRecord, rng, scale: float) -> ForwardRecord:
    hidden = record.hidden_states.astype(np.float64)
    sigma = scale * float(np.sqrt(np.mean(hidden**2)))
    hidden = (hidden + rng.normal(0.0, sigma, size=hidden.shape)).astype(np.float32)
    return ForwardRecord(
        logits=record.logits, hidden_states=hidden, token_logprobs=record.token_logprobs
    )


def coe_corpus(
    n_correct: int,
    n_incorrect: int,
    seed: int = 0,
    model: Model | None = None,
    prompt_len: int = 4,
    gen_len: int = 24,
    smooth_temperature: float = 0.2,
    erratic_temperature: float = 4.0,
    perturb_scale: float = 0.01,
) -> list:
    """Labeled caches for confidence evaluation; deterministic per seed.

    Smooth (correct) traces decode at smooth_temperature, which on the
    byte-continuation model is effectively deterministic repetition, then get a
    small seeded perturbation of relative size perturb_scale on their cache and
    hidden tensors. Erratic (incorrect) traces decode at erratic_temperature
    and are stored untouched.
    """
    if n_correct < 0 or n_incorrect < 0:
        raise DomainError("corpus sizes must be >= 0")
    model = model or coe_model()
    rng = np.random.default_rng([seed, 0xC0E])
    traces = []
    plan = [(True, i) for i in range(n_correct)] + [(False, i) for i in range(n_incorrect)]
    for correct, i in plan:
        prompt = rng.integers(0, 256, size=prompt_len).tolist()
        temp = smooth_temperature if correct else erratic_temperature
        sampler = TemperatureSampler(temperature=temp, seed=int(rng.integers(0, 2**63)))
        tokens, cache, record = generate(model, prompt, sampler, StopRule(max_new_tokens=gen_len))
        if correct and perturb_scale > 0.0:
            cache = _perturbed_cache(cache, rng, perturb_scale)
            record = _perturbed_record(record, rng, perturb_scale)
        tag = "smooth" if correct else "erratic"
        traces.append(
            CoeTrace(
                trace_id=f"{tag}-{i:04d}",
                tokens=tokens,
                cache=cache,
                record=record,
                correct=correct,
            )
        )
    return traces


@dataclass
class DifficultyTrace:
    trace_id: str
    tokens: list
    cache: KVCache
    d: int


# Disjoint prompt byte ranges per difficulty label keep pooled features separable.
_LABEL_BYTE_RANGES = {0: (40, 48), 25: (70, 78), 75: (130, 138), 100: (200, 208)}


def difficulty_corpus(counts: dict, seed: int = 0, model: Model | None = None, prompt_len: int = 12) -> list:
    """Caches labeled with difficulty values; counts maps label -> how many."""
    for label in counts:
        if label not in _LABEL_BYTE_RANGES:
            raise DomainError(f"difficulty label must be one of {sorted(_LABEL_BYTE_RANGES)}, got {label}")
    model = model or coe_model()
    rng = np.random.default_rng([seed, 0xD1FF])
    traces = []
    for label in sorted(counts):
        lo, hi = _LABEL_BYTE_RANGES[label]
        for i in range(counts[label]):
            prompt = rng.integers(lo, hi, size=prompt_len).tolist()
            cache, _ = prefill(model, prompt)
            traces.append(DifficultyTrace(trace_id=f"d{label}-{i:04d}", tokens=prompt, cache=cache, d=label))
    return traces


def gaussian_clusters(n_per_cluster: int, dim: int, separation: float = 6.0, seed: int = 0):
    """Two Gaussian blobs labeled d=0 and d=100, linearly separable by construction."""
    rng = np.random.default_rng([seed, 0x6A])
    center = rng.standard_normal(dim)
    center *= separation / (2.0 * np.linalg.norm(center))
    lo = rng.standard_normal((n_per_cluster, dim)) - center
    hi = rng.standard_normal((n_per_cluster, dim)) + center
    xs = np.vstack([lo, hi])
    ds = np.r_[np.zeros(n_per_cluster), np.full(n_per_cluster, 100.0)]
    return xs, ds


def scripted_model(config: ModelConfig, script: dict, seed: int = 0, emb_scale: float = 64.0) -> Model:
    """A model whose greedy next token is script[last_token], independent of context.

    Embeddings are scaled unit vectors; attention output and FFN output
    projections are zero, so the residual stream stays embedding + position
    exactly and the unembedding can read the last token back off it. K/V
    projections stay random so caches remain informative for pooling. The
    construction is verified over every position before returning.
    """
    rng = np.random.default_rng([seed, 0x5C12])
    d = config.d_model
    directions = rng.standard_normal((config.vocab_size, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    embedding = (emb_scale * directions).astype(np.float32)
    lm_head = np.zeros((d, config.vocab_size), dtype=np.float32)
    for src, dst in script.items():
        lm_head[:, dst] += directions[src].astype(np.float32)
    ones = np.ones(d, dtype=np.float32)
    proj_scale = 1.0 / np.sqrt(d)
    layers = []
    for _ in range(config.num_layers):
        layers.append(
            LayerWeights(
                attn_norm=ones.copy(),
                wq=(proj_scale * rng.standard_normal((d, d))).astype(np.float32),
                wk=(proj_scale * rng.standard_normal((d, config.kv_dim))).astype(np.float32),
                wv=(proj_scale * rng.standard_normal((d, config.kv_dim))).astype(np.float32),
                wo=np.zeros((d, d), dtype=np.float32),
                ffn_norm=ones.copy(),
                ffn_w1=(proj_scale * rng.standard_normal((d, 4 * d))).astype(np.float32),
                ffn_w2=np.zeros((4 * d, d), dtype=np.float32),
            )
        )
    model = Model(
        config=config,
        embedding=embedding,
        positional=sinusoidal_positions(config.max_seq_len, d),
        layers=tuple(layers),
        final_norm=ones.copy(),
        lm_head=lm_head,
    )
    _assert_script(model, script)
    return model


def _assert_script(model: Model, script: dict) -> None:
    # The residual stream never moves, so the check is pure embedding math,
    # evaluated at every position the model could ever decode from.
    for src, dst in script.items():
        h = model.embedding[src][None, :] + model.positional
        logits = _rms_norm(h, model.final_norm) @ model.lm_head
        got = np.argmax(logits, axis=1)
        if not np.all(got == dst):
            bad = int(np.nonzero(got != dst)[0][0])
            raise ConfigError(
                f"scripted transition {src}->{dst} broken at position {bad} (seed collision); "
                "pick another seed or raise emb_scale"
            )


@dataclass
class Episode:
    trace_id: str
    prompt: list
    gold: list
    is_easy: bool


@dataclass
class SwitchingWorkload:
    """Everything needed to run controller experiments end to end."""

    model: Model
    estimator: DifficultyEstimator
    episodes: list
    cfg: SwitchConfig
    seed: int
    oracle_report: dict = field(default_factory=dict)


def _draw_prompt(rng, byte_range, length: int) -> list:
    lo, hi = byte_range
    return rng.integers(lo, hi + 1, size=length).tolist()


def train_switch_oracle(
    model: Model,
    pooling: PoolingSpec,
    seed: int = 0,
    prompts_per_class: int = 32,
    prompt_len: int = 12,
    think_tokens: int = 64,
    train_cfg: TrainConfig | None = None,
) -> tuple[DifficultyEstimator, dict]:
    """Fit the difficulty oracle on three cache populations.

    Easy prompts are labeled 0 and hard prompts 100 (prompt-only caches); hard
    prompts with an open thinking block plus `think_tokens` of filler are
    labeled 0 again, which is what lets the controller down-switch once slow
    thinking has "progressed". Returns the estimator plus a saturation report.
    """
    from .kvpool import pool_classifier_features  # local import to avoid cycle at module load

    rng = np.random.default_rng([seed, 0x04AC])
    template = PromptTemplate()
    feats, labels = [], []
    populations = {"easy": [], "hard": [], "thinking": []}
    for _ in range(prompts_per_class):
        easy = _draw_prompt(rng, EASY_BYTES, prompt_len)
        hard = _draw_prompt(rng, HARD_BYTES, prompt_len)
        thinking = hard + list(template.slow_suffix) + [FILLER_TOKEN] * think_tokens
        for name, tokens, d in (("easy", easy, 0.0), ("hard", hard, 100.0), ("thinking", thinking, 0.0)):
            cache, _ = prefill(model, tokens)
            x = pool_classifier_features(cache, pooling)
            feats.append(x)
            labels.append(d)
            populations[name].append(x)
    cfg = train_cfg or TrainConfig(learning_rate=0.05, momentum=0.9, batch_size=32, epochs=200, seed=seed)
    estimator = fit_estimator(np.asarray(feats), np.asarray(labels), cfg)
    report = {
        name: float(np.mean([estimator.predict(x) for x in xs])) for name, xs in populations.items()
    }
    return estimator, report


def build_switching_workload(
    n_easy: int = 10,
    n_hard: int = 10,
    seed: int = 0,
    num_layers: int = 2,
    d_model: int = 64,
    num_heads: int = 4,
    num_kv_heads: int = 2,
    max_seq_len: int = 384,
    prompt_len: int = 12,
    pooling: PoolingSpec | None = None,
    tau: float = 50.0,
    tau_fast: float = 20.0,
    tau_slow: float = 80.0,
    checkpoint_every: int = 64,
    max_new_tokens: int = 256,
    prompts_per_class: int = 32,
    train_cfg: TrainConfig | None = None,
) -> SwitchingWorkload:
    """Scripted model + oracle estimator + labeled episodes, deterministic per seed.

    Fast runs close their thinking block immediately and answer in a handful of
    tokens; plain slow runs never close it and burn the whole budget, so slow
    emits far more than 4x the fast token count by construction.
    """
    if n_easy < 0 or n_hard < 0:
        raise DomainError("episode counts must be >= 0")
    config = ModelConfig(
        num_layers=num_layers,
        num_heads=num_heads,
        num_kv_heads=num_kv_heads,
        d_model=d_model,
        vocab_size=VOCAB_SIZE,
        max_seq_len=max_seq_len,
        seed=seed,
    )
    model = scripted_model(config, SWITCH_SCRIPT, seed=seed)
    pooling = pooling or PoolingSpec(source=SOURCE_KV, position_agg=POS_SUM_LAST, last_k=checkpoint_every)
    estimator, report = train_switch_oracle(
        model,
        pooling,
        seed=seed,
        prompts_per_class=prompts_per_class,
        prompt_len=prompt_len,
        think_tokens=checkpoint_every,
        train_cfg=train_cfg,
    )
    cfg = SwitchConfig(
        tau=tau,
        tau_fast=tau_fast,
        tau_slow=tau_slow,
        checkpoint_every=checkpoint_every,
        pooling=pooling,
        max_new_tokens=max_new_tokens,
        stop_tokens=frozenset({EOS_TOKEN}),
    )
    rng = np.random.default_rng([seed, 0xEA5])
    episodes = []
    for i in range(n_easy):
        episodes.append(
            Episode(
                trace_id=f"easy-{i:03d}",
                prompt=_draw_prompt(rng, EASY_BYTES, prompt_len),
                gold=[ANSWER_TOKEN],
                is_easy=True,
            )
        )
    for i in range(n_hard):
        episodes.append(
            Episode(
                trace_id=f"hard-{i:03d}",
                prompt=_draw_prompt(rng, HARD_BYTES, prompt_len),
                gold=[HARD_GOLD_TOKEN],
                is_easy=False,
            )
        )
    return SwitchingWorkload(
        model=model, estimator=estimator, episodes=episodes, cfg=cfg, seed=seed, oracle_report=report
    )
