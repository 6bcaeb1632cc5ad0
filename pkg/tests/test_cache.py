import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kvprobe.cache import LayerCache, load_spill, rep_key_of


def fill(cache: LayerCache, n: int, dim: int, start: int = 0) -> None:
    """Append n pairs whose first component encodes the position."""
    if n == 0:
        return
    pos = np.arange(start, start + n, dtype=np.float32)
    keys = np.zeros((n, dim), dtype=np.float32)
    keys[:, 0] = pos
    cache.append(keys, keys.copy())


def test_rep_key_is_member_mean():
    keys = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]], dtype=np.float32)
    assert rep_key_of(keys) == pytest.approx([1.0, 1.0])
    # max-score retrieval still stores the mean representative
    assert rep_key_of(keys, mode="max-score") == pytest.approx([1.0, 1.0])


def test_routing_example():
    """Five pairs with n_sink=2, c=2: two sinks, one sealed chunk, one
    open pair."""
    cache = LayerCache(dim=2, n_sink=2, n_local=4, chunk=2)
    fill(cache, 5, 2)
    view = cache.snapshot()
    assert view.sink_keys.shape[0] == 2
    assert [(c.chunk_id, c.rows) for c in view.chunks] == [(0, 2), (1, 1)]
    assert cache.open_rows == 1
    assert cache.total_pairs == 5


def test_chunk_spans_tile_the_stream():
    cache = LayerCache(dim=3, n_sink=4, n_local=6, chunk=3)
    fill(cache, 29, 3)
    view = cache.snapshot()
    expect_start = 4
    for ch in view.chunks:
        assert ch.start == expect_start
        assert ch.end == ch.start + ch.rows - 1
        expect_start = ch.end + 1
    assert expect_start == 29
    # position encoding survives routing
    for ch in view.chunks:
        assert ch.keys[:, 0] == pytest.approx(
            np.arange(ch.start, ch.end + 1))


def test_tail_start_and_retrievable():
    cache = LayerCache(dim=2, n_sink=4, n_local=8, chunk=2)
    fill(cache, 3, 2)
    assert cache.tail_start == 3  # fewer pairs than sinks: tail empty
    fill(cache, 17, 2, start=3)  # total 20
    assert cache.tail_start == 12
    view = cache.snapshot()
    assert view.local_keys.shape[0] == 8
    assert view.local_keys[0, 0] == pytest.approx(12.0)
    # retrievable chunks end strictly before the tail
    ids = [c.chunk_id for c in view.retrievable]
    assert ids == [0, 1, 2, 3]
    assert all(c.end < view.tail_start for c in view.retrievable)


def test_local_tail_never_contains_sinks():
    cache = LayerCache(dim=2, n_sink=4, n_local=16, chunk=2)
    fill(cache, 10, 2)
    view = cache.snapshot()
    assert view.local_keys.shape[0] == 6  # 10 total minus 4 sinks
    assert view.local_keys[0, 0] == pytest.approx(4.0)


def test_append_returns_sealed_count():
    cache = LayerCache(dim=2, n_sink=2, n_local=4, chunk=4)
    sealed = cache.append(np.zeros((5, 2), np.float32),
                          np.zeros((5, 2), np.float32))
    assert sealed == 0  # 2 sinks + 3 open
    sealed = cache.append(np.zeros((1, 2), np.float32),
                          np.zeros((1, 2), np.float32))
    assert sealed == 1


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 40), st.integers(0, 8), st.integers(1, 6),
       st.integers(1, 12))
def test_conservation(total, n_sink, chunk, n_local):
    cache = LayerCache(dim=2, n_sink=n_sink, n_local=n_local, chunk=chunk)
    fill(cache, total, 2)
    view = cache.snapshot()
    stored = view.sink_keys.shape[0] + sum(c.rows for c in view.chunks)
    assert stored == total == cache.total_pairs
    assert view.local_keys.shape[0] == max(0, min(total - min(total, n_sink),
                                                  n_local))
    assert view.tail_start == max(min(total, n_sink), total - n_local)
    # every full chunk has exactly `chunk` rows; only the last may be short
    for ch in view.chunks[:-1]:
        assert ch.rows == chunk


def test_spill_round_trip(tmp_path):
    cache = LayerCache(dim=3, n_sink=2, n_local=4, chunk=2)
    fill(cache, 11, 3)
    path = tmp_path / "cold.akvc"
    wrote = cache.spill(path)
    full = [c for c in cache.snapshot().chunks if c.rows == 2]
    assert wrote == len(full)
    chunk, dim, pairs = load_spill(path)
    assert (chunk, dim) == (2, 3)
    assert len(pairs) == wrote
    for (keys, values), ch in zip(pairs, full):
        assert np.array_equal(keys, ch.keys)
        assert np.array_equal(values, ch.values)
        # representative recomputed from members matches the original
        assert rep_key_of(keys) == pytest.approx(ch.rep_key)


def test_spill_partial_chunk_stays_in_memory(tmp_path):
    cache = LayerCache(dim=2, n_sink=0, n_local=2, chunk=4)
    fill(cache, 6, 2)
    path = tmp_path / "cold.akvc"
    assert cache.spill(path) == 1  # 4 full + 2 open


def test_spill_rejects_bad_magic(tmp_path):
    path = tmp_path / "cold.akvc"
    LayerCache(dim=2, n_sink=0, n_local=2, chunk=2).spill(path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="magic"):
        load_spill(path)


def test_spill_rejects_truncation(tmp_path):
    cache = LayerCache(dim=2, n_sink=0, n_local=2, chunk=2)
    fill(cache, 4, 2)
    path = tmp_path / "cold.akvc"
    cache.spill(path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-3])
    with pytest.raises(ValueError, match=r"byte"):
        load_spill(path)


def test_snapshot_is_isolated_from_later_appends():
    cache = LayerCache(dim=2, n_sink=1, n_local=2, chunk=2)
    fill(cache, 4, 2)
    before = cache.snapshot()
    fill(cache, 4, 2, start=4)
    assert before.total_pairs == 4
    assert cache.snapshot().total_pairs == 8
