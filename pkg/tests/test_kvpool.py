"""Pooling specs and pooling ops against naive loop references."""

import numpy as np
import pytest

from kvrep.errors import ConfigError, DegenerateInputError, DomainError, TrajectoryTooShortError
from kvrep.kvpool import (
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
from kvrep.minitx import KVCache, full_forward, init_model, ModelConfig

import oracles
from conftest import random_cache


# ---------------------------------------------------------------- spec codec


def test_canonical_spec_string():
    spec = PoolingSpec(source="kv", position_agg="sumlast", last_k=128, layers=(17, 35))
    assert format_pooling_spec(spec) == "kv:concat:sumlast128:layers=17,35:nonorm"
    assert parse_pooling_spec("kv:concat:sumlast128:layers=17,35:nonorm") == spec


@pytest.mark.parametrize(
    "text",
    [
        "v:concat:pertoken:layers=all:nonorm",
        "hidden:headmean:meanall:perlayer:l2",
        "kv:headmean:sumlast7:layers=0,2,3:l2",
        "kv:concat:meanall:perlayer=1,3:nonorm",
    ],
)
def test_spec_roundtrip(text):
    assert format_pooling_spec(parse_pooling_spec(text)) == text


def test_spec_validation():
    with pytest.raises(ConfigError):
        PoolingSpec(source="q")
    with pytest.raises(ConfigError):
        PoolingSpec(position_agg="sumlast")  # missing k
    with pytest.raises(ConfigError):
        PoolingSpec(last_k=4)  # k without sumlast
    with pytest.raises(ConfigError):
        PoolingSpec(position_agg="pertoken", layer_agg="perlayer")
    with pytest.raises(ConfigError):
        PoolingSpec(layers=(1, 1))
    with pytest.raises(ConfigError):
        PoolingSpec(layers=(-1,))
    with pytest.raises(ConfigError):
        parse_pooling_spec("kv:concat:meanall:layers=all")
    with pytest.raises(ConfigError):
        parse_pooling_spec("kv:concat:sumlastX:layers=all:nonorm")


def test_free_axis_and_vector_flags():
    assert PoolingSpec().is_vector
    assert PoolingSpec(position_agg="pertoken").free_axis == AXIS_TOKEN
    assert PoolingSpec(layer_agg="perlayer").free_axis == AXIS_LAYER
    assert PoolingSpec().free_axis is None


# ---------------------------------------------------------------- oracles


def test_pooling_ops_match_naive_references():
    rng = np.random.default_rng(42)
    for trial in range(8):
        num_layers = int(rng.integers(1, 5))
        t = int(rng.integers(2, 33))
        cache = random_cache(rng, num_layers=num_layers, t=t)
        layers = tuple(range(num_layers))

        got = pool_sentence(cache)
        want = oracles.naive_sentence(cache, layers)
        assert np.max(np.abs(got - want)) < 1e-6

        got = pool_token_trajectory(cache).points
        want = oracles.naive_token_trajectory(cache, layers)
        assert np.max(np.abs(got - want)) < 1e-6

        got = pool_layer_trajectory(cache).points if num_layers >= 2 else None
        if got is not None:
            want = oracles.naive_layer_trajectory(cache, layers)
            assert np.max(np.abs(got - want)) < 1e-6

        k = int(rng.integers(1, t + 4))
        spec = PoolingSpec(position_agg="sumlast", last_k=k)
        got = pool_classifier_features(cache, spec)
        want = oracles.naive_classifier_features(cache, layers, k)
        assert np.max(np.abs(got - want)) < 1e-6


def test_headmean_matches_naive():
    rng = np.random.default_rng(5)
    cache = random_cache(rng, num_layers=2, t=6, num_kv_heads=3, d_head=5)
    spec = PoolingSpec(head_agg="headmean", normalize="l2")
    got = pool_sentence(cache, spec)
    want = oracles.naive_sentence(cache, (0, 1), head_agg="headmean")
    assert got.shape == (10,)  # 2 * d_head
    assert np.max(np.abs(got - want)) < 1e-6


def test_keys_precede_values_in_concat():
    cache = KVCache(num_layers=1, num_kv_heads=2, d_head=3, capacity=2)
    k = np.full((1, 2, 3), 1.0, dtype=np.float32)
    v = np.full((1, 2, 3), 2.0, dtype=np.float32)
    cache.append(k, v)
    cache.append(k, v)
    point = pool_token_trajectory(cache, PoolingSpec(source="kv", position_agg="pertoken")).points[0]
    assert np.array_equal(point, np.array([1.0] * 6 + [2.0] * 6))


def test_layer_subset_selection():
    rng = np.random.default_rng(9)
    cache = random_cache(rng, num_layers=4, t=5)
    spec = PoolingSpec(layers=(1, 3), position_agg="sumlast", last_k=2)
    got = pool_classifier_features(cache, spec)
    want = oracles.naive_classifier_features(cache, (1, 3), 2)
    assert np.max(np.abs(got - want)) < 1e-6
    with pytest.raises(ConfigError):
        pool_classifier_features(cache, PoolingSpec(layers=(4,), position_agg="sumlast", last_k=2))


def test_sumlast_clamps_to_sequence():
    rng = np.random.default_rng(3)
    cache = random_cache(rng, num_layers=1, t=3)
    a = pool_classifier_features(cache, PoolingSpec(position_agg="sumlast", last_k=3))
    b = pool_classifier_features(cache, PoolingSpec(position_agg="sumlast", last_k=50))
    assert np.array_equal(a, b)


def test_hidden_source_layer_trajectory():
    model = init_model(ModelConfig(num_layers=3, num_heads=2, num_kv_heads=2, d_model=16, max_seq_len=8, seed=1))
    rec = full_forward(model, [1, 2, 3, 4])
    traj = pool_layer_trajectory(rec)
    assert traj.axis == AXIS_LAYER and traj.points.shape == (4, 16)  # embedding row included
    want = oracles.naive_hidden_layer_trajectory(rec.hidden_states, range(4))
    assert np.max(np.abs(traj.points - want)) < 1e-6
    # a bare ndarray works too
    traj2 = pool_layer_trajectory(np.asarray(rec.hidden_states), PoolingSpec(source="hidden", layer_agg="perlayer"))
    assert np.array_equal(traj.points, traj2.points)


# ---------------------------------------------------------------- guards


def test_pool_sentence_requires_its_shape():
    rng = np.random.default_rng(0)
    cache = random_cache(rng, num_layers=1, t=3)
    with pytest.raises(ConfigError):
        pool_sentence(cache, PoolingSpec(position_agg="sumlast", last_k=2, normalize="l2"))
    with pytest.raises(ConfigError):
        pool_sentence(cache, PoolingSpec())  # missing l2


def test_classifier_features_must_be_single_unnormalized_vector():
    rng = np.random.default_rng(0)
    cache = random_cache(rng, num_layers=2, t=3)
    with pytest.raises(ConfigError):
        pool_classifier_features(cache, PoolingSpec(position_agg="pertoken"))
    with pytest.raises(ConfigError):
        pool_classifier_features(cache, PoolingSpec(normalize="l2"))


def test_token_trajectory_needs_two_positions():
    rng = np.random.default_rng(0)
    cache = random_cache(rng, num_layers=1, t=1)
    with pytest.raises(TrajectoryTooShortError):
        pool_token_trajectory(cache)


def test_layer_trajectory_needs_two_layers():
    rng = np.random.default_rng(0)
    cache = random_cache(rng, num_layers=1, t=4)
    with pytest.raises(TrajectoryTooShortError):
        pool_layer_trajectory(cache)


def test_zero_vector_l2_is_degenerate():
    cache = KVCache(num_layers=1, num_kv_heads=1, d_head=2, capacity=1)
    cache.append(np.zeros((1, 1, 2), dtype=np.float32), np.zeros((1, 1, 2), dtype=np.float32))
    with pytest.raises(DegenerateInputError):
        pool_sentence(cache)


def test_apply_pooling_rejects_wrong_inputs():
    with pytest.raises(DomainError):
        apply_pooling(np.zeros((3, 4)), PoolingSpec(source="hidden"))
    with pytest.raises(DomainError):
        apply_pooling(np.zeros((3, 4)), PoolingSpec(source="kv"))


def test_trajectory_validation():
    with pytest.raises(DomainError):
        Trajectory(axis="token", points=np.zeros((0, 3)))
    with pytest.raises(DomainError):
        Trajectory(axis="diag", points=np.zeros((2, 3)))
    with pytest.raises(DomainError):
        Trajectory(axis="token", points=np.array([[np.nan, 0.0]]))


# ---------------------------------------------------------------- helpers


def test_evenly_spaced_layers():
    assert evenly_spaced_layers(36, 2) == (17, 35)
    assert evenly_spaced_layers(8, 4) == (1, 3, 5, 7)
    assert evenly_spaced_layers(8, 8) == tuple(range(8))
    assert evenly_spaced_layers(5, 1) == (4,)
    with pytest.raises(ConfigError):
        evenly_spaced_layers(4, 5)


def test_random_embedding_is_seeded():
    assert np.array_equal(random_embedding(16, 7), random_embedding(16, 7))
    assert not np.array_equal(random_embedding(16, 7), random_embedding(16, 8))
    with pytest.raises(DomainError):
        random_embedding(0, 1)
