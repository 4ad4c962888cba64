import numpy as np
import pytest

from core.errors import DimensionError
from core.value_buffer import ValueBuffer


def test_fifo_eviction():
    buffer = ValueBuffer(capacity=2, embedding_dim=1, n_actions=2)
    for i, name in enumerate("xyz"):
        buffer.insert([float(i)], [float(i), 0.0])
    assert len(buffer) == 2
    assert buffer.evictions == 1
    held = [float(entry.embedding[0]) for entry in buffer.entries()]
    assert held == [1.0, 2.0]
    # x 的位置只能检索到 y
    np.testing.assert_array_equal(buffer.estimate([0.0], k=1, temperature=0.0), [1.0, 0.0])


def test_inserted_entry_retrievable_by_own_embedding():
    rng = np.random.default_rng(0)
    buffer = ValueBuffer(capacity=50, embedding_dim=4, n_actions=3)
    for _ in range(20):
        buffer.insert(rng.normal(size=4), rng.normal(size=3))
    e, q = rng.normal(size=4), np.array([7.0, -1.0, 2.0])
    buffer.insert(e, q)
    np.testing.assert_allclose(buffer.estimate(e, k=1, temperature=0.0), q)


def test_default_capacity_holds_two_thousand():
    buffer = ValueBuffer(capacity=2000, embedding_dim=2, n_actions=2)
    for i in range(2100):
        buffer.insert([float(i), 0.0], [0.0, 0.0])
    assert len(buffer) == 2000
    assert buffer.evictions == 100


def test_equidistant_mean():
    buffer = ValueBuffer(capacity=4, embedding_dim=1, n_actions=2)
    buffer.insert([-1.0], [0.0, 2.0])
    buffer.insert([1.0], [2.0, 0.0])
    np.testing.assert_array_equal(buffer.estimate([0.0], k=2, temperature=0.0), [1.0, 1.0])
    np.testing.assert_allclose(buffer.estimate([0.0], k=2, temperature=1e-5), [1.0, 1.0])


@pytest.mark.parametrize("k", [1, 5, 100])
def test_single_entry_for_any_k(k):
    buffer = ValueBuffer(capacity=4, embedding_dim=2, n_actions=3)
    buffer.insert([3.0, 3.0], [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(buffer.estimate([0.0, 0.0], k=k, temperature=0.0), [1.0, 2.0, 3.0])
    np.testing.assert_allclose(buffer.estimate([0.0, 0.0], k=k, temperature=1e-5), [1.0, 2.0, 3.0])


def test_small_temperature_selects_nearest():
    buffer = ValueBuffer(capacity=4, embedding_dim=1, n_actions=2)
    buffer.insert([0.0], [5.0, -5.0])
    buffer.insert([1.0], [100.0, 100.0])
    weight_far = np.exp(-1.0 / 1e-5)
    assert weight_far < 1e-30
    np.testing.assert_allclose(buffer.estimate([0.0], k=2, temperature=1e-5), [5.0, -5.0], atol=1e-6)


def test_empty_buffer_returns_none():
    buffer = ValueBuffer(capacity=4, embedding_dim=2, n_actions=2)
    assert buffer.estimate([0.0, 0.0], k=5, temperature=0.0) is None
    buffer.insert([0.0, 0.0], [1.0, 1.0])
    buffer.clear()
    assert buffer.estimate([0.0, 0.0], k=5, temperature=1e-5) is None


@pytest.mark.parametrize("k", [1, 3, 7])
def test_mean_matches_brute_force(k):
    rng = np.random.default_rng(k)
    buffer = ValueBuffer(capacity=40, embedding_dim=3, n_actions=4)
    embeddings = rng.normal(size=(60, 3)).astype(np.float32)
    qs = rng.normal(size=(60, 4))
    buffer.insert_many(embeddings, qs)
    live_e, live_q = embeddings[20:], qs[20:]
    for _ in range(10):
        query = rng.normal(size=3).astype(np.float32)
        d = np.sum((live_e.astype(np.float64) - query) ** 2, axis=1)
        nearest = np.argsort(d, kind="stable")[:k]
        np.testing.assert_allclose(buffer.estimate(query, k=k, temperature=0.0), live_q[nearest].mean(axis=0))


def test_weighted_estimate_is_convex_combination():
    rng = np.random.default_rng(9)
    buffer = ValueBuffer(capacity=30, embedding_dim=2, n_actions=3)
    buffer.insert_many(rng.normal(size=(30, 2)), rng.normal(size=(30, 3)))
    for temperature in (1e-5, 0.1, 10.0):
        query = rng.normal(size=2)
        hits = buffer.index.query(query, 5)
        contributing = np.stack([buffer._entries[h.id] for h in hits])
        estimate = buffer.estimate(query, k=5, temperature=temperature)
        assert np.all(estimate >= contributing.min(axis=0) - 1e-12)
        assert np.all(estimate <= contributing.max(axis=0) + 1e-12)


def test_validation():
    buffer = ValueBuffer(capacity=4, embedding_dim=2, n_actions=2)
    with pytest.raises(DimensionError):
        buffer.insert([0.0, 0.0], [1.0, 2.0, 3.0])
    with pytest.raises(DimensionError):
        buffer.insert([0.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        buffer.insert([0.0, 0.0], [np.nan, 0.0])
    buffer.insert([0.0, 0.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        buffer.estimate([0.0, 0.0], k=0, temperature=0.0)
    with pytest.raises(ValueError):
        buffer.estimate([0.0, 0.0], k=1, temperature=-1.0)
    with pytest.raises(DimensionError):
        buffer.estimate([0.0], k=1, temperature=0.0)
    with pytest.raises(ValueError):
        ValueBuffer(capacity=0, embedding_dim=2, n_actions=2)


def test_state_round_trip():
    rng = np.random.default_rng(5)
    buffer = ValueBuffer(capacity=8, embedding_dim=3, n_actions=2)
    buffer.insert_many(rng.normal(size=(11, 3)), rng.normal(size=(11, 2)))
    restored = ValueBuffer.from_state(buffer.state_meta(), buffer.state_arrays())
    assert len(restored) == len(buffer)
    assert restored.evictions == 3
    query = rng.normal(size=3)
    np.testing.assert_array_equal(
        restored.estimate(query, k=3, temperature=1e-2),
        buffer.estimate(query, k=3, temperature=1e-2),
    )
    # 恢复后继续按原顺序淘汰
    buffer.insert([0.0, 0.0, 0.0], [1.0, 1.0])
    restored.insert([0.0, 0.0, 0.0], [1.0, 1.0])
    assert [e.qnp.tolist() for e in buffer.entries()] == [e.qnp.tolist() for e in restored.entries()]
