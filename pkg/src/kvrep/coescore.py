"""Trajectory confidence scores and output-probability baselines.

A trajectory of embeddings (token axis from the KV cache, or layer axis from
hidden states) is reduced to per-step geometry: step length Δr and turning
angle Δθ. Two aggregations follow:

  coe_r  mean of (alpha * Δr + beta * Δθ), a weighted real combination
  coe_c  magnitude of the mean complex number Δr + i*Δθ

Baselines scored from a ForwardRecord: maxprob (mean max softmax probability,
higher is correct), ppl (exp of negative mean realized-token log-prob, lower is
correct), entropy (mean softmax entropy, lower is correct). Every score carries
its orientation tag so downstream evaluation never guesses directionality.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, TrajectoryTooShortError
from .kvpool import (
    AXIS_LAYER,
    AXIS_TOKEN,
    PoolingSpec,
    Trajectory,
    pool_layer_trajectory,
    pool_token_trajectory,
)
from .minitx import ForwardRecord, log_softmax_f64, softmax_f64

METHOD_COE_R = "coe_r"
METHOD_COE_C = "coe_c"
METHOD_MAXPROB = "maxprob"
METHOD_PPL = "ppl"
METHOD_ENTROPY = "entropy"
AXIS_NA = "n/a"
HIGHER_IS_CORRECT = "higher-is-correct"
LOWER_IS_CORRECT = "lower-is-correct"

_METHODS = (METHOD_COE_R, METHOD_COE_C, METHOD_MAXPROB, METHOD_PPL, METHOD_ENTROPY)
_AXES = (AXIS_TOKEN, AXIS_LAYER, AXIS_NA)


@dataclass
class StepDeltas:
    """Per-step geometry of a trajectory; one entry per consecutive point pair.

    zero_norm_steps counts steps whose Δθ was pinned to 0 because at least one
    endpoint had zero norm (the angle is undefined there, not an error).
    """

    delta_r: np.ndarray  # float64 [n_steps], each >= 0
    delta_theta: np.ndarray  # float64 [n_steps], each in [0, pi]
    zero_norm_steps: int = 0

    def __post_init__(self):
        self.delta_r = np.asarray(self.delta_r, dtype=np.float64)
        self.delta_theta = np.asarray(self.delta_theta, dtype=np.float64)
        if self.delta_r.shape != self.delta_theta.shape or self.delta_r.ndim != 1:
            raise DomainError("delta_r and delta_theta must be 1-d arrays of equal length")

    @property
    def n_steps(self) -> int:
        return self.delta_r.shape[0]


@dataclass(frozen=True)
class CoEWeights:
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and np.isfinite(self.beta)):
            raise DomainError("CoE weights must be finite")


@dataclass(frozen=True)
class ConfidenceScore:
    value: float
    method: str
    axis: str = AXIS_NA
    orientation: str = HIGHER_IS_CORRECT

    def __post_init__(self):
        if self.method not in _METHODS:
            raise DomainError(f"unknown scoring method {self.method!r}")
        if self.axis not in _AXES:
            raise DomainError(f"unknown score axis {self.axis!r}")
        if self.orientation not in (HIGHER_IS_CORRECT, LOWER_IS_CORRECT):
            raise DomainError(f"unknown orientation {self.orientation!r}")
        if not np.isfinite(self.value):
            raise DomainError(f"score value must be finite, got {self.value}")


def step_deltas(traj: Trajectory) -> StepDeltas:
    """Step lengths and turning angles between consecutive trajectory points.

    Δr_i = ||p_{i+1} - p_i||_2 and Δθ_i = arccos of the clamped cosine between
    p_{i+1} and p_i, computed in float64. Steps touching a zero-norm point get
    Δθ = 0 and are tallied in zero_norm_steps.
    """
    if traj.n_points < 2:
        raise TrajectoryTooShortError(f"need >= 2 points for deltas, have {traj.n_points}")
    pts = traj.points.astype(np.float64)
    a, b = pts[:-1], pts[1:]
    delta_r = np.linalg.norm(b - a, axis=1)
    norms = np.linalg.norm(pts, axis=1)
    denom = norms[:-1] * norms[1:]
    ok = denom > 0.0
    cos = np.zeros(a.shape[0], dtype=np.float64)
    np.divide(np.einsum("ij,ij->i", a, b), denom, out=cos, where=ok)
    cos = np.clip(cos, -1.0, 1.0)
    delta_theta = np.where(ok, np.arccos(cos), 0.0)
    return StepDeltas(delta_r=delta_r, delta_theta=delta_theta, zero_norm_steps=int((~ok).sum()))


def coe_r(deltas: StepDeltas, weights: CoEWeights | None = None, axis: str = AXIS_NA) -> ConfidenceScore:
    """Weighted real aggregation: mean over steps of alpha*Δr + beta*Δθ."""
    if deltas.n_steps < 1:
        raise TrajectoryTooShortError("coe_r needs at least one step")
    w = weights or CoEWeights()
    value = float(np.mean(w.alpha * deltas.delta_r + w.beta * deltas.delta_theta))
    return ConfidenceScore(value=value, method=METHOD_COE_R, axis=axis)


def coe_c(deltas: StepDeltas, axis: str = AXIS_NA) -> ConfidenceScore:
    """Complex aggregation: |mean of (Δr + i*Δθ)| = hypot(mean Δr, mean Δθ)."""
    if deltas.n_steps < 1:
        raise TrajectoryTooShortError("coe_c needs at least one step")
    value = float(np.hypot(np.mean(deltas.delta_r), np.mean(deltas.delta_theta)))
    return ConfidenceScore(value=value, method=METHOD_COE_C, axis=axis)


def score_baseline(kind: str, record: ForwardRecord) -> ConfidenceScore:
    """Output-probability baselines computed from a forward record.

    maxprob and entropy average over every logits row; ppl exponentiates the
    negative mean realized-token log-prob (so it needs >= 1 realized step).
    """
    if kind == METHOD_PPL:
        lp = np.asarray(record.token_logprobs, dtype=np.float64)
        if lp.size == 0:
            raise DomainError("ppl needs at least one realized-token logprob")
        return ConfidenceScore(
            value=float(np.exp(-np.mean(lp))), method=METHOD_PPL, orientation=LOWER_IS_CORRECT
        )
    if record.logits.shape[0] == 0:
        raise DomainError("baseline scoring needs at least one logits row")
    probs = softmax_f64(record.logits)
    if kind == METHOD_MAXPROB:
        return ConfidenceScore(
            value=float(np.mean(np.max(probs, axis=1))), method=METHOD_MAXPROB
        )
    if kind == METHOD_ENTROPY:
        logp = log_softmax_f64(record.logits)
        ent = -np.sum(probs * logp, axis=1)
        return ConfidenceScore(
            value=float(np.mean(ent)), method=METHOD_ENTROPY, orientation=LOWER_IS_CORRECT
        )
    raise DomainError(f"unknown baseline kind {kind!r}")


def kv_coe(
    obj,
    spec: PoolingSpec | None = None,
    method: str = METHOD_COE_C,
    axis: str = AXIS_TOKEN,
    weights: CoEWeights | None = None,
) -> ConfidenceScore:
    """Pooling + deltas + aggregation in one call.

    axis=token pools a per-token trajectory from a cache; axis=layer pools a
    per-layer trajectory from a cache or a hidden-state record. The result is
    definitionally identical to composing the pooling op, step_deltas, and the
    chosen aggregation.
    """
    if axis == AXIS_TOKEN:
        traj = pool_token_trajectory(obj, spec)
    elif axis == AXIS_LAYER:
        traj = pool_layer_trajectory(obj, spec)
    else:
        raise DomainError(f"kv_coe axis must be token or layer, got {axis!r}")
    deltas = step_deltas(traj)
    if method == METHOD_COE_R:
        return coe_r(deltas, weights, axis=axis)
    if method == METHOD_COE_C:
        return coe_c(deltas, axis=axis)
    raise DomainError(f"kv_coe method must be coe_r or coe_c, got {method!r}")


def format_score_line(trace_id: str, score: ConfidenceScore) -> str:
    """One-line wire form: `trace_id method axis orientation value`."""
    if any(ch.isspace() for ch in trace_id) or not trace_id:
        raise DomainError(f"trace_id must be nonempty and whitespace-free, got {trace_id!r}")
    return f"{trace_id} {score.method} {score.axis} {score.orientation} {score.value!r}"


def parse_score_line(line: str) -> tuple[str, ConfidenceScore]:
    parts = line.split()
    if len(parts) != 5:
        raise DomainError(f"score line needs 5 fields, got {len(parts)}: {line!r}")
    trace_id, method, axis, orientation, value = parts
    try:
        val = float(value)
    except ValueError as exc:
        raise DomainError(f"malformed score value {value!r}") from exc
    return trace_id, ConfidenceScore(value=val, method=method, axis=axis, orientation=orientation)
