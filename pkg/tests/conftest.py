import numpy as np
import pytest

from kvrep.minitx import KVCache, Model, ModelConfig, init_model


@pytest.fixture
def tiny_config() -> ModelConfig:
    return ModelConfig(num_layers=2, num_heads=4, num_kv_heads=2, d_model=32, max_seq_len=64, seed=3)


@pytest.fixture
def tiny_model(tiny_config) -> Model:
    return init_model(tiny_config)


def random_cache(rng, num_layers: int, t: int, num_kv_heads: int = 2, d_head: int = 4) -> KVCache:
    """A cache filled with standard-normal K/V rows, appended one step at a time."""
    cache = KVCache(num_layers=num_layers, num_kv_heads=num_kv_heads, d_head=d_head, capacity=t)
    for _ in range(t):
        k = rng.standard_normal((num_layers, num_kv_heads, d_head)).astype(np.float32)
        v = rng.standard_normal((num_layers, num_kv_heads, d_head)).astype(np.float32)
        cache.append(k, v)
    return cache
