import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kvprobe.cache import KVChunk, rep_key_of
from kvprobe.linalg import cosine
from kvprobe.probe import decoding_probe
from kvprobe.retrieval import (ScoredChunk, UnknownChunk, materialize,
                               score_chunks, score_chunks_across_heads,
                               select_topk)


def mk_chunk(cid, keys, start=None):
    keys = np.asarray(keys, dtype=np.float32)
    start = 10 * cid if start is None else start
    return KVChunk(chunk_id=cid, layer=0, head=0, start=start,
                   end=start + keys.shape[0] - 1, keys=keys,
                   values=keys + 100.0, rep_key=rep_key_of(keys))


def test_mean_mode_scores_probe_against_representative():
    probe = np.array([1.0, 0.0], dtype=np.float32)
    chunks = [mk_chunk(0, [[1.0, 0.0], [1.0, 0.0]]),
              mk_chunk(1, [[0.0, 1.0], [0.0, 1.0]])]
    scored = score_chunks(probe, chunks, mode="mean")
    assert [s.chunk_id for s in scored] == [0, 1]
    assert scored[0].score == pytest.approx(1.0)
    assert scored[1].score == pytest.approx(0.0, abs=1e-12)


def test_max_score_mode_takes_best_member():
    probe = np.array([1.0, 0.0], dtype=np.float32)
    # representative mean is (0.5, 0.5) but one member aligns exactly
    ch = mk_chunk(0, [[1.0, 0.0], [0.0, 1.0]])
    mean_scored = score_chunks(probe, [ch], mode="mean")[0]
    max_scored = score_chunks(probe, [ch], mode="max-score")[0]
    assert mean_scored.score == pytest.approx(cosine([1, 0], [0.5, 0.5]))
    assert max_scored.score == pytest.approx(1.0)


def test_zero_representative_scores_zero():
    probe = np.array([1.0, 0.0], dtype=np.float32)
    ch = mk_chunk(0, [[1.0, 1.0], [-1.0, -1.0]])  # mean is the zero vector
    assert score_chunks(probe, [ch])[0].score == pytest.approx(0.0)


def test_score_accepts_probe_query_objects():
    probe = decoding_probe(np.array([0.0, 2.0], dtype=np.float32))
    ch = mk_chunk(0, [[0.0, 1.0]])
    assert score_chunks(probe, [ch])[0].score == pytest.approx(1.0)


def test_across_heads_averages_per_head_scores():
    probes = [np.array([1.0, 0.0], dtype=np.float32),
              np.array([0.0, 1.0], dtype=np.float32)]
    views = [[mk_chunk(0, [[1.0, 0.0]])], [mk_chunk(0, [[1.0, 0.0]])]]
    scored = score_chunks_across_heads(probes, views)
    assert len(scored) == 1
    assert scored[0].score == pytest.approx(0.5)  # (1.0 + 0.0) / 2


def test_across_heads_rejects_misaligned_views():
    probes = [np.array([1.0, 0.0], dtype=np.float32)] * 2
    views = [[mk_chunk(0, [[1.0, 0.0]])], [mk_chunk(1, [[1.0, 0.0]])]]
    with pytest.raises(ValueError):
        score_chunks_across_heads(probes, views)


def test_select_topk_orders_by_score_then_id():
    scored = [ScoredChunk(chunk_id=0, score=0.5),
              ScoredChunk(chunk_id=1, score=0.9),
              ScoredChunk(chunk_id=2, score=0.5),
              ScoredChunk(chunk_id=3, score=0.1)]
    sel = select_topk(scored, budget_pairs=6, c=2)
    assert sel.selected == (1, 0, 2)  # tie between 0 and 2 goes to lower id
    assert sel.pairs_used == 6


def test_select_topk_stops_at_first_overflow():
    scored = [ScoredChunk(chunk_id=0, score=0.9, rows=3),
              ScoredChunk(chunk_id=1, score=0.8, rows=3),
              ScoredChunk(chunk_id=2, score=0.7, rows=1)]
    sel = select_topk(scored, budget_pairs=4, c=3)
    # the second chunk overflows; selection stops rather than skipping it
    assert sel.selected == (0,)
    assert sel.pairs_used == 3


def test_select_topk_zero_budget():
    sel = select_topk([ScoredChunk(chunk_id=0, score=1.0)], 0, c=4)
    assert sel.selected == ()
    assert sel.pairs_used == 0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=0, max_size=40),
       st.integers(0, 30), st.integers(1, 4))
def test_select_topk_equals_brute_force(levels, budget_chunks, c):
    """Quantized scores force ties; greedy selection must equal the
    documented sort's prefix."""
    scored = [ScoredChunk(chunk_id=i, score=lv / 5.0)
              for i, lv in enumerate(levels)]
    sel = select_topk(scored, budget_chunks * c, c)
    order = sorted(scored, key=lambda s: (-s.score, s.chunk_id))
    want = tuple(s.chunk_id for s in order[:budget_chunks])
    assert sel.selected == want
    assert sel.pairs_used == len(want) * c


def test_materialize_orders_by_position():
    chunks = [mk_chunk(0, [[1.0, 0.0]], start=30),
              mk_chunk(1, [[0.0, 1.0]], start=10),
              mk_chunk(2, [[1.0, 1.0]], start=20)]
    sel = select_topk(score_chunks(np.array([1.0, 1.0], np.float32), chunks),
                      budget_pairs=3, c=1)
    keys, values = materialize(sel, chunks)
    assert np.allclose(keys, [[0.0, 1.0], [1.0, 1.0], [1.0, 0.0]])
    assert np.allclose(values, keys + 100.0)


def test_materialize_unknown_chunk():
    sel = select_topk([ScoredChunk(chunk_id=7, score=1.0)], 4, c=4)
    with pytest.raises(UnknownChunk):
        materialize(sel, [mk_chunk(0, [[1.0, 0.0]])])
