"""Trajectory confidence scores: step geometry, aggregations, baselines."""

import numpy as np
import pytest

from kvrep.coescore import (
    AXIS_NA,
    HIGHER_IS_CORRECT,
    LOWER_IS_CORRECT,
    METHOD_COE_C,
    METHOD_COE_R,
    CoEWeights,
    ConfidenceScore,
    coe_c,
    coe_r,
    format_score_line,
    kv_coe,
    parse_score_line,
    score_baseline,
    step_deltas,
)
from kvrep.errors import DomainError, TrajectoryTooShortError
from kvrep.kvpool import AXIS_TOKEN, Trajectory, pool_token_trajectory
from kvrep.minitx import ForwardRecord

from conftest import random_cache


def traj(points):
    return Trajectory(axis="token", points=np.asarray(points, dtype=np.float64))


def test_hand_case_unit_step():
    """(1,0) -> (0,1): step length sqrt(2), turning angle pi/2, both exact."""
    d = step_deltas(traj([[1.0, 0.0], [0.0, 1.0]]))
    assert d.n_steps == 1
    assert d.delta_r[0] == np.sqrt(2.0)
    assert d.delta_theta[0] == np.pi / 2.0
    assert d.zero_norm_steps == 0


def test_collinear_steps_have_zero_angle():
    # Axis-aligned points keep the cosine arithmetic exact, so the angle is 0.0.
    d = step_deltas(traj([[1.0, 0.0], [2.0, 0.0], [4.0, 0.0]]))
    assert np.all(d.delta_theta == 0.0)
    assert np.array_equal(d.delta_r, [1.0, 2.0])
    # Diagonal points round the cosine just below 1; arccos amplifies that to
    # about sqrt(2 eps), so collinearity holds only to ~1e-7 there.
    d = step_deltas(traj([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]))
    assert np.all(d.delta_theta <= 1e-7)
    assert np.allclose(d.delta_r, np.sqrt(2.0))


def test_zero_norm_points_get_zero_angle_and_are_counted():
    d = step_deltas(traj([[0.0, 0.0], [3.0, 4.0], [0.0, 0.0]]))
    assert d.zero_norm_steps == 2
    assert np.all(d.delta_theta == 0.0)
    assert np.allclose(d.delta_r, [5.0, 5.0])


def test_angles_are_scale_invariant_lengths_scale():
    rng = np.random.default_rng(11)
    pts = rng.standard_normal((12, 5))
    base = step_deltas(traj(pts))
    scaled = step_deltas(traj(3.5 * pts))
    assert np.allclose(scaled.delta_theta, base.delta_theta, atol=1e-12)
    assert np.allclose(scaled.delta_r, 3.5 * base.delta_r, rtol=1e-12)


def test_step_lengths_are_translation_invariant():
    rng = np.random.default_rng(12)
    pts = rng.standard_normal((9, 4))
    shift = rng.standard_normal(4)
    assert np.allclose(
        step_deltas(traj(pts + shift)).delta_r, step_deltas(traj(pts)).delta_r, rtol=1e-9
    )


def test_zero_trajectory_scores_exactly_zero():
    d = step_deltas(traj(np.zeros((6, 3))))
    assert coe_r(d).value == 0.0
    assert coe_c(d).value == 0.0


def test_too_short_trajectories_raise():
    with pytest.raises(TrajectoryTooShortError):
        step_deltas(traj([[1.0, 2.0]]))


def test_coe_r_weighting():
    d = step_deltas(traj([[1.0, 0.0], [0.0, 1.0]]))
    only_r = coe_r(d, CoEWeights(alpha=1.0, beta=0.0))
    only_t = coe_r(d, CoEWeights(alpha=0.0, beta=1.0))
    assert only_r.value == pytest.approx(np.sqrt(2.0))
    assert only_t.value == pytest.approx(np.pi / 2.0)
    both = coe_r(d)
    assert both.value == pytest.approx(np.sqrt(2.0) + np.pi / 2.0)
    assert both.method == METHOD_COE_R and both.orientation == HIGHER_IS_CORRECT


def test_coe_c_is_hypot_of_means():
    rng = np.random.default_rng(2)
    d = step_deltas(traj(rng.standard_normal((20, 6))))
    want = np.hypot(np.mean(d.delta_r), np.mean(d.delta_theta))
    assert coe_c(d).value == pytest.approx(want, rel=1e-12)


def test_coe_c_never_exceeds_coe_r_at_unit_weights():
    rng = np.random.default_rng(7)
    for _ in range(200):
        pts = rng.standard_normal((int(rng.integers(2, 16)), int(rng.integers(1, 8))))
        d = step_deltas(traj(pts))
        assert coe_c(d).value <= coe_r(d).value + 1e-12


def test_kv_coe_composes_pooling_and_aggregation():
    rng = np.random.default_rng(21)
    cache = random_cache(rng, num_layers=2, t=10)
    direct = kv_coe(cache, method=METHOD_COE_R, axis=AXIS_TOKEN)
    manual = coe_r(step_deltas(pool_token_trajectory(cache)), axis=AXIS_TOKEN)
    assert direct.value == manual.value
    assert direct.axis == AXIS_TOKEN
    with pytest.raises(DomainError):
        kv_coe(cache, axis="diag")
    with pytest.raises(DomainError):
        kv_coe(cache, method="maxprob")


# ---------------------------------------------------------------- baselines


def make_record(logits, logprobs):
    logits = np.asarray(logits, dtype=np.float32)
    hidden = np.zeros((1, logits.shape[0], 2), dtype=np.float32)
    return ForwardRecord(
        logits=logits, hidden_states=hidden, token_logprobs=np.asarray(logprobs, dtype=np.float64)
    )


def test_maxprob_uniform_rows():
    rec = make_record(np.zeros((3, 4)), [np.log(0.25)] * 2)
    s = score_baseline("maxprob", rec)
    assert s.value == pytest.approx(0.25)
    assert s.orientation == HIGHER_IS_CORRECT and s.axis == AXIS_NA


def test_ppl_of_uniform_predictions_is_vocab_size():
    rec = make_record(np.zeros((3, 8)), [np.log(1.0 / 8.0)] * 2)
    s = score_baseline("ppl", rec)
    assert s.value == pytest.approx(8.0)
    assert s.orientation == LOWER_IS_CORRECT


def test_entropy_of_uniform_rows():
    rec = make_record(np.zeros((2, 16)), [0.0])
    s = score_baseline("entropy", rec)
    assert s.value == pytest.approx(np.log(16.0))
    assert s.orientation == LOWER_IS_CORRECT


def test_ppl_requires_a_realized_step():
    rec = make_record(np.zeros((1, 4)), [])
    with pytest.raises(DomainError):
        score_baseline("ppl", rec)
    with pytest.raises(DomainError):
        score_baseline("nonsense", rec)


# ---------------------------------------------------------------- wire form


def test_score_line_roundtrip():
    s = ConfidenceScore(value=1.25e-3, method=METHOD_COE_C, axis="layer", orientation=LOWER_IS_CORRECT)
    line = format_score_line("trace-07", s)
    tid, back = parse_score_line(line)
    assert tid == "trace-07" and back == s


def test_score_line_preserves_full_precision():
    value = float(np.pi) / 7.0
    _, back = parse_score_line(format_score_line("t", ConfidenceScore(value=value, method="coe_r")))
    assert back.value == value


def test_score_line_rejects_malformed_input():
    with pytest.raises(DomainError):
        parse_score_line("only three fields")
    with pytest.raises(DomainError):
        parse_score_line("t coe_r token higher-is-correct notafloat")
    with pytest.raises(DomainError):
        format_score_line("has space", ConfidenceScore(value=1.0, method="coe_r"))


def test_confidence_score_validation():
    with pytest.raises(DomainError):
        ConfidenceScore(value=float("nan"), method="coe_r")
    with pytest.raises(DomainError):
        ConfidenceScore(value=1.0, method="coe_z")
    with pytest.raises(DomainError):
        ConfidenceScore(value=1.0, method="coe_r", orientation="sideways")
