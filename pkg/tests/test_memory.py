import numpy as np
import pytest

from slade.errors import DimensionError
from slade.memory import MemoryStore


def test_unseen_node_is_zero_state():
    store = MemoryStore(dim=3, k=2)
    mem = store.get_memory(5)
    assert np.array_equal(mem.s, np.zeros(3))
    assert np.array_equal(mem.s_prev, np.zeros(3))
    assert mem.last_time is None
    assert store.recent_neighbors(5) == []


def test_get_memory_returns_copies():
    store = MemoryStore(dim=2, k=2)
    store.apply_updates(np.array([0]), np.array([[1.0, 2.0]]), np.array([5.0]))
    mem = store.get_memory(0)
    mem.s[0] = 99.0
    assert store.get_memory(0).s[0] == 1.0


def test_apply_updates_shifts_prev_atomically():
    store = MemoryStore(dim=2, k=2)
    store.apply_updates(np.array([1]), np.array([[1.0, 1.0]]), np.array([1.0]))
    store.apply_updates(np.array([1]), np.array([[2.0, 2.0]]), np.array([2.0]))
    mem = store.get_memory(1)
    assert np.array_equal(mem.s, [2.0, 2.0])
    assert np.array_equal(mem.s_prev, [1.0, 1.0])
    assert mem.last_time == 2.0


def test_apply_updates_rejects_duplicates():
    store = MemoryStore(dim=2, k=2)
    with pytest.raises(ValueError):
        store.apply_updates(np.array([3, 3]), np.zeros((2, 2)), np.zeros(2))


def test_memory_rows_mix_seen_and_unseen():
    store = MemoryStore(dim=2, k=2)
    store.apply_updates(np.array([0]), np.array([[1.5, -1.0]]), np.array([1.0]))
    rows = store.memory_rows(np.array([7, 0]))
    assert np.array_equal(rows, [[0.0, 0.0], [1.5, -1.0]])
    prev = store.prev_memory_rows(np.array([0, 7]))
    assert np.array_equal(prev, np.zeros((2, 2)))


def test_time_gaps():
    store = MemoryStore(dim=2, k=2)
    store.apply_updates(np.array([0, 1]), np.zeros((2, 2)), np.array([1.0, 4.0]))
    gaps = store.time_gaps(np.array([0, 1, 9]), np.array([3.0, 4.0, 8.0]))
    assert np.array_equal(gaps, [2.0, 0.0, 0.0])


def test_staging_mean_pools_per_node():
    store = MemoryStore(dim=2, k=2)
    store.stage_raw_message(4, np.array([1.0, 0.0]))
    store.stage_raw_message(2, np.array([5.0, 5.0]))
    store.stage_raw_message(4, np.array([3.0, 2.0]))
    pooled = store.flush_stage()
    assert list(pooled.keys()) == [4, 2]  # first-staged order
    assert np.array_equal(pooled[4], [2.0, 1.0])
    assert np.array_equal(pooled[2], [5.0, 5.0])
    assert store.flush_stage() == {}


def test_staging_rejects_bad_shapes():
    store = MemoryStore(dim=2, k=2)
    with pytest.raises(DimensionError):
        store.stage_raw_message(0, np.zeros((2, 2)))
    store.stage_raw_message(0, np.zeros(3))
    with pytest.raises(DimensionError):
        store.stage_raw_message(0, np.zeros(4))


def test_ring_evicts_oldest_and_orders_newest_first():
    store = MemoryStore(dim=2, k=3)
    for i, t in enumerate([1.0, 2.0, 3.0, 4.0]):
        store.record_neighbor(0, i + 10, t)
    assert store.recent_neighbors(0) == [(13, 4.0), (12, 3.0), (11, 2.0)]
    assert store.neighbors_chronological(0) == [(11, 2.0), (12, 3.0), (13, 4.0)]


def test_reset_all_clears_state():
    store = MemoryStore(dim=2, k=2)
    store.apply_updates(np.array([0]), np.ones((1, 2)), np.array([1.0]))
    store.record_neighbor(0, 1, 1.0)
    store.reset_all()
    assert np.array_equal(store.get_memory(0).s, np.zeros(2))
    assert store.get_memory(0).last_time is None
    assert store.recent_neighbors(0) == []


def test_state_arrays_round_trip():
    store = MemoryStore(dim=3, k=2)
    rng = np.random.default_rng(0)
    store.apply_updates(np.array([2, 5]), rng.normal(size=(2, 3)),
                        np.array([1.0, 2.0]))
    store.apply_updates(np.array([2]), rng.normal(size=(1, 3)),
                        np.array([3.0]))
    store.record_neighbor(2, 5, 1.0)
    store.record_neighbor(2, 0, 2.5)
    store.record_neighbor(2, 1, 3.0)  # evicts (5, 1.0)
    state = store.state_arrays()

    other = MemoryStore(dim=3, k=2)
    other.load_state_arrays(state)
    for node in (0, 2, 5):
        a, b = store.get_memory(node), other.get_memory(node)
        assert np.array_equal(a.s, b.s)
        assert np.array_equal(a.s_prev, b.s_prev)
        assert a.last_time == b.last_time
        assert store.recent_neighbors(node) == other.recent_neighbors(node)


def test_growth_preserves_data():
    store = MemoryStore(dim=2, k=2, size_hint=1)
    store.apply_updates(np.array([0]), np.array([[1.0, 2.0]]), np.array([1.0]))
    store.apply_updates(np.array([500]), np.array([[3.0, 4.0]]), np.array([2.0]))
    assert np.array_equal(store.get_memory(0).s, [1.0, 2.0])
    assert np.array_equal(store.get_memory(500).s, [3.0, 4.0])
