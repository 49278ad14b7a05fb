"""Difficulty labels, the MLP estimator, and its training loop."""

import numpy as np
import pytest

from kvrep.difficulty import (
    HIDDEN_WIDTH,
    LABEL_VALUES,
    SHORT_FAST_LIMIT,
    DifficultyEstimator,
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
from kvrep.errors import DomainError
from kvrep.toydata import gaussian_clusters


def test_label_truth_table_exhaustive():
    for fast_correct in (False, True):
        for slow_correct in (False, True):
            for fast_len in (0, SHORT_FAST_LIMIT - 1, SHORT_FAST_LIMIT, 4096):
                label = assign_label(fast_correct, slow_correct, fast_len)
                if fast_correct and fast_len < SHORT_FAST_LIMIT:
                    assert label.d == 0
                elif fast_correct:
                    assert label.d == 25
                elif slow_correct:
                    assert label.d == 75
                else:
                    assert label.d == 100
                assert label.d in LABEL_VALUES


def test_label_rejects_negative_length():
    with pytest.raises(DomainError):
        assign_label(True, True, -1)


def test_init_params_deterministic_and_bounded():
    a = init_params(6, seed=5)
    b = init_params(6, seed=5)
    assert np.array_equal(a.w1, b.w1) and np.array_equal(a.w2, b.w2) and a.b2 == b.b2
    assert a.w1.shape == (HIDDEN_WIDTH, 6)
    assert np.all(np.abs(a.w1) <= 1.0 / np.sqrt(6))
    assert np.all(np.abs(a.w2) <= 1.0 / np.sqrt(HIDDEN_WIDTH))
    assert not np.array_equal(a.w1, init_params(6, seed=6).w1)


def test_params_shape_validation():
    with pytest.raises(DomainError):
        MLPParams(np.zeros((100, 4)), np.zeros(100), np.zeros((1, 100)), 0.0)
    with pytest.raises(DomainError):
        init_params(0)


def test_forward_is_scaled_sigmoid():
    params = init_params(3, seed=0)
    x = np.array([0.5, -0.2, 1.0])
    y = mlp_forward(params, x)
    assert 0.0 < y < 100.0
    z = np.maximum(params.w1 @ x + params.b1, 0.0)
    logit = float((params.w2 @ z)[0]) + params.b2
    assert y == pytest.approx(100.0 / (1.0 + np.exp(-logit)), rel=1e-12)


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(77)
    params = init_params(4, seed=3)
    xs = rng.standard_normal((6, 4))
    ys = rng.uniform(0, 100, size=6)
    _, grads = mlp_loss_and_grad(params, xs, ys)
    eps = 1e-5

    def loss_at(p):
        return mlp_loss_and_grad(p, xs, ys)[0]

    for name in ("w1", "b1", "w2"):
        analytic = getattr(grads, name)
        flat_idx = rng.choice(analytic.size, size=min(60, analytic.size), replace=False)
        for idx in flat_idx:
            p = params.copy()
            arr = getattr(p, name)
            arr.flat[idx] += eps
            hi = loss_at(p)
            arr.flat[idx] -= 2 * eps
            lo = loss_at(p)
            fd = (hi - lo) / (2 * eps)
            a = analytic.flat[idx]
            assert abs(a - fd) <= 1e-4 * max(1.0, abs(a), abs(fd))
    p = params.copy()
    p.b2 += eps
    hi = loss_at(p)
    p.b2 -= 2 * eps
    lo = loss_at(p)
    assert abs(grads.b2 - (hi - lo) / (2 * eps)) <= 1e-4


def test_training_is_deterministic_per_seed():
    rng = np.random.default_rng(8)
    xs = rng.standard_normal((40, 5))
    ys = rng.uniform(0, 100, size=40)
    cfg = TrainConfig(epochs=3, seed=2)
    a = mlp_train(xs, ys, cfg)
    b = mlp_train(xs, ys, cfg)
    assert np.array_equal(a.w1, b.w1) and np.array_equal(a.w2, b.w2) and a.b2 == b.b2
    c = mlp_train(xs, ys, TrainConfig(epochs=3, seed=3))
    assert not np.array_equal(a.w1, c.w1)


def test_zero_epochs_returns_initialization():
    rng = np.random.default_rng(9)
    xs = rng.standard_normal((10, 4))
    ys = rng.uniform(0, 100, size=10)
    trained = mlp_train(xs, ys, TrainConfig(epochs=0, seed=6))
    init = init_params(4, seed=6)
    assert np.array_equal(trained.w1, init.w1) and trained.b2 == init.b2


def test_training_reduces_loss():
    xs, ys = gaussian_clusters(30, dim=6, seed=4)
    cfg = TrainConfig(epochs=20, seed=0)
    before = mlp_loss_and_grad(init_params(6, cfg.seed), xs, ys)[0]
    after = mlp_loss_and_grad(mlp_train(xs, ys, cfg), xs, ys)[0]
    assert after < before


def test_fit_estimator_standardizes_and_predicts():
    xs, ys = gaussian_clusters(40, dim=5, seed=1)
    xs = np.column_stack([xs, np.full(xs.shape[0], 3.25)])  # constant dim
    est = fit_estimator(xs, ys, TrainConfig(epochs=15, seed=0))
    assert est.feature_std[-1] == 1.0  # zero-variance dims fall back to 1
    x = xs[0]
    manual = mlp_forward(est.params, (x - est.feature_mean) / est.feature_std)
    assert est.predict(x) == manual
    with pytest.raises(DomainError):
        est.predict(x[:-1])


def test_estimator_tensor_pack_roundtrip():
    xs, ys = gaussian_clusters(25, dim=4, seed=2)
    est = fit_estimator(xs, ys, TrainConfig(epochs=5, seed=1))
    back = estimator_from_tensors(estimator_tensors(est))
    x = xs[3]
    assert back.predict(x) == est.predict(x)
    with pytest.raises(DomainError):
        estimator_from_tensors({"w1": est.params.w1})


def test_estimator_rejects_bad_standardization():
    params = init_params(3, seed=0)
    with pytest.raises(DomainError):
        DifficultyEstimator(params=params, feature_mean=np.zeros(3), feature_std=np.zeros(3))
    with pytest.raises(DomainError):
        DifficultyEstimator(params=params, feature_mean=np.zeros(2), feature_std=np.ones(2))
