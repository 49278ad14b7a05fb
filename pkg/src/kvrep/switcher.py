"""Fast/slow thinking controller driven by KV-cache difficulty scores.

An episode starts by prefetching the prompt, pooling its cache, and scoring
difficulty d. The initial decision picks a mode and forces the matching prompt
suffix into the decode stream: fast mode appends an empty thinking block
(<think>\\n</think>), slow mode an open one (<think>\\n). In generative mode the
controller re-pools the live cache every checkpoint_every sampled tokens and may
inject a single control token to change mode: </think> to leave slow thinking
when d drops below tau_fast, <think> to enter it when d rises above tau_slow.
Classification mode stops after the initial decision (exactly one event).

Control tokens are forced (they bypass the sampler) and enter the KV cache like
ordinary tokens. Decoding is greedy unless a temperature is configured.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError, DomainError, UsageError
from .kvpool import PoolingSpec, POS_SUM_LAST, SOURCE_KV, pool_classifier_features
from .minitx import (
    END_THINK_TOKEN,
    GreedySampler,
    Model,
    TemperatureSampler,
    THINK_TOKEN,
    decode_step,
    prefill,
)

MODE_FAST = "fast"
MODE_SLOW = "slow"
ACTION_START_FAST = "start-fast"
ACTION_START_SLOW = "start-slow"
ACTION_INJECT_THINK = "inject-think"
ACTION_INJECT_END_THINK = "inject-end-think"
ACTION_NONE = "none"
MODE_CLASSIFICATION = "classification"
MODE_GENERATIVE = "generative"

_NEWLINE = 10
_WHITESPACE_BYTES = frozenset((9, 10, 13, 32))


@dataclass(frozen=True)
class PromptTemplate:
    """Token suffixes that place the model into a thinking mode."""

    fast_suffix: tuple = (THINK_TOKEN, _NEWLINE, END_THINK_TOKEN)
    slow_suffix: tuple = (THINK_TOKEN, _NEWLINE)

    def __post_init__(self):
        fast = tuple(int(t) for t in self.fast_suffix)
        slow = tuple(int(t) for t in self.slow_suffix)
        if THINK_TOKEN not in fast or END_THINK_TOKEN not in fast:
            raise ConfigError("fast suffix must contain both control tokens (a closed thinking block)")
        if THINK_TOKEN not in slow or END_THINK_TOKEN in slow:
            raise ConfigError("slow suffix must contain only the opening control token")
        object.__setattr__(self, "fast_suffix", fast)
        object.__setattr__(self, "slow_suffix", slow)

    def suffix(self, mode: str) -> tuple:
        return self.fast_suffix if mode == MODE_FAST else self.slow_suffix


def _default_pooling() -> PoolingSpec:
    return PoolingSpec(source=SOURCE_KV, position_agg=POS_SUM_LAST, last_k=64)


@dataclass(frozen=True)
class SwitchConfig:
    """Thresholds, cadence, and budgets for one controller configuration.

    tau gates the initial decision (slow iff d > tau); tau_fast/tau_slow gate
    checkpoint switches with hysteresis, so tau_fast <= tau <= tau_slow.
    """

    tau: float = 50.0
    tau_fast: float = 50.0
    tau_slow: float = 50.0
    checkpoint_every: int = 64
    mode: str = MODE_GENERATIVE
    max_down_switches: int = 1
    max_up_switches: int = 1
    pooling: PoolingSpec = field(default_factory=_default_pooling)
    max_new_tokens: int = 256
    stop_tokens: frozenset = frozenset()
    template: PromptTemplate = field(default_factory=PromptTemplate)
    temperature: float | None = None
    sampler_seed: int = 0

    def __post_init__(self):
        if not (self.tau_fast <= self.tau <= self.tau_slow):
            raise ConfigError(
                f"need tau_fast <= tau <= tau_slow, got {self.tau_fast}/{self.tau}/{self.tau_slow}"
            )
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        if self.mode not in (MODE_CLASSIFICATION, MODE_GENERATIVE):
            raise ConfigError(f"unknown switching mode {self.mode!r}")
        if self.max_down_switches < 0 or self.max_up_switches < 0:
            raise ConfigError("switch budgets must be >= 0")
        if self.max_new_tokens < 0:
            raise ConfigError("max_new_tokens must be >= 0")
        object.__setattr__(self, "stop_tokens", frozenset(int(t) for t in self.stop_tokens))

    def make_sampler(self):
        if self.temperature is None:
            return GreedySampler()
        return TemperatureSampler(temperature=self.temperature, seed=self.sampler_seed)


@dataclass
class SwitchEvent:
    token_index: int  # sampled-token count at which the event fired (0 = prompt)
    score: float | None  # difficulty estimate, None for unscored plain runs
    action: str


@dataclass
class SwitchTranscript:
    """Complete decision record of one episode; replays deterministically."""

    events: list = field(default_factory=list)
    final_tokens: list = field(default_factory=list)
    tokens_generated: int = 0
    mode_history: list = field(default_factory=list)
    truncated: bool = False

    @property
    def mode(self) -> str:
        return self.mode_history[-1]

    def count_actions(self, action: str) -> int:
        return sum(1 for e in self.events if e.action == action)


def initial_decision(d: float, cfg: SwitchConfig) -> str:
    """Slow thinking iff d > tau; a tie stays fast."""
    return MODE_SLOW if d > cfg.tau else MODE_FAST


def checkpoint_decision(current_mode: str, d: float, cfg: SwitchConfig, transcript: SwitchTranscript) -> str:
    """Mid-generation action under hysteresis thresholds and switch budgets."""
    if cfg.mode != MODE_GENERATIVE:
        raise UsageError("checkpoint decisions only exist in generative mode")
    if current_mode == MODE_SLOW:
        if d < cfg.tau_fast and transcript.count_actions(ACTION_INJECT_END_THINK) < cfg.max_down_switches:
            return ACTION_INJECT_END_THINK
        return ACTION_NONE
    if current_mode == MODE_FAST:
        if d > cfg.tau_slow and transcript.count_actions(ACTION_INJECT_THINK) < cfg.max_up_switches:
            return ACTION_INJECT_THINK
        return ACTION_NONE
    raise DomainError(f"unknown mode {current_mode!r}")


def _drive(model: Model, cache, last_row, forced, cfg: SwitchConfig, transcript: SwitchTranscript, estimator):
    """Shared decode loop: forced suffix first, then sampling with checkpoints.

    Every emitted token (forced or sampled) counts against max_new_tokens and
    lands in the cache; checkpoints count sampled tokens only, so their cadence
    is exact even when injections stretch the output.
    """
    sampler = cfg.make_sampler()
    mode = transcript.mode
    queue = list(forced)
    sampled = 0
    limit = min(cache.capacity, model.config.max_seq_len)
    while transcript.tokens_generated < cfg.max_new_tokens:
        if cache.current_len >= limit:
            transcript.truncated = True
            break
        if queue:
            tok, was_forced = int(queue.pop(0)), True
        else:
            tok, was_forced = int(sampler.select(last_row)), False
        last_row, _ = decode_step(model, cache, tok)
        transcript.final_tokens.append(tok)
        transcript.tokens_generated += 1
        if was_forced:
            continue
        sampled += 1
        if tok in cfg.stop_tokens:
            break
        if estimator is not None and cfg.mode == MODE_GENERATIVE and sampled % cfg.checkpoint_every == 0:
            d = float(estimator.predict(pool_classifier_features(cache, cfg.pooling)))
            action = checkpoint_decision(mode, d, cfg, transcript)
            transcript.events.append(SwitchEvent(token_index=sampled, score=d, action=action))
            if action == ACTION_INJECT_END_THINK:
                queue.append(END_THINK_TOKEN)
                mode = MODE_FAST
                transcript.mode_history.append(mode)
            elif action == ACTION_INJECT_THINK:
                queue.append(THINK_TOKEN)
                mode = MODE_SLOW
                transcript.mode_history.append(mode)
    return transcript


def run_controlled_generation(model: Model, estimator, prompt, cfg: SwitchConfig | None = None):
    """Score the prompt's cache, pick a mode, then decode with checkpoints.

    `estimator` is anything with predict(features) -> float on the pooled
    feature dimension (normally a DifficultyEstimator). Returns (tokens,
    transcript) where tokens includes the prompt, the forced suffix, and
    everything generated.
    """
    cfg = cfg or SwitchConfig()
    prompt = [int(t) for t in prompt]
    if not prompt:
        raise DomainError("prompt must be nonempty")
    cache, record = prefill(model, prompt)
    d0 = float(estimator.predict(pool_classifier_features(cache, cfg.pooling)))
    mode = initial_decision(d0, cfg)
    start = ACTION_START_SLOW if mode == MODE_SLOW else ACTION_START_FAST
    transcript = SwitchTranscript(
        events=[SwitchEvent(token_index=0, score=d0, action=start)],
        final_tokens=list(prompt),
        mode_history=[mode],
    )
    scored = estimator if cfg.mode == MODE_GENERATIVE else None
    _drive(model, cache, record.logits[-1], cfg.template.suffix(mode), cfg, transcript, scored)
    return transcript.final_tokens, transcript


def run_plain_mode(model: Model, prompt, mode: str, cfg: SwitchConfig | None = None):
    """Uncontrolled baseline: force the mode's suffix, then decode to the budget.

    Shares the controller's decode mechanics exactly (same sampler, stop rule,
    and budget accounting) so controlled runs can be compared byte for byte.
    """
    cfg = cfg or SwitchConfig()
    if mode not in (MODE_FAST, MODE_SLOW):
        raise DomainError(f"unknown mode {mode!r}")
    prompt = [int(t) for t in prompt]
    if not prompt:
        raise DomainError("prompt must be nonempty")
    cache, record = prefill(model, prompt)
    start = ACTION_START_SLOW if mode == MODE_SLOW else ACTION_START_FAST
    transcript = SwitchTranscript(
        events=[SwitchEvent(token_index=0, score=None, action=start)],
        final_tokens=list(prompt),
        mode_history=[mode],
    )
    _drive(model, cache, record.logits[-1], cfg.template.suffix(mode), cfg, transcript, None)
    return transcript.final_tokens, transcript


def grade_answer(generated_tokens, gold, stop_tokens=frozenset()) -> bool:
    """Exact-match grading of the answer span.

    The span is everything after the last </think> token (the whole output when
    none is present), with trailing stop tokens dropped and whitespace bytes
    trimmed from both ends; gold is trimmed the same way.
    """
    toks = [int(t) for t in generated_tokens]
    if END_THINK_TOKEN in toks:
        last = len(toks) - 1 - toks[::-1].index(END_THINK_TOKEN)
        span = toks[last + 1 :]
    else:
        span = toks
    stop = frozenset(int(t) for t in stop_tokens)
    while span and span[-1] in stop:
        span.pop()
    return _trim(span) == _trim([int(t) for t in gold])


def _trim(tokens: list) -> list:
    start, end = 0, len(tokens)
    while start < end and tokens[start] in _WHITESPACE_BYTES:
        start += 1
    while end > start and tokens[end - 1] in _WHITESPACE_BYTES:
        end -= 1
    return tokens[start:end]
