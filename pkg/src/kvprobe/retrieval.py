"""Chunk scoring against a probe and budgeted top-k selection.

Scores are cosines between the probe and each chunk's representative
key ("mean" mode) or the best cosine over the chunk's member keys
("max-score" mode). Selection is greedy by descending score in whole
chunks, ties broken toward the older (smaller id) chunk, stopping as
soon as the next chunk would overflow the pair budget. Materialized
K*/V* rows come out in original token order, not score order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cache import CacheView, KVChunk
from .linalg import ZeroNorm, cosine
from .probe import ProbeQuery


class UnknownChunk(KeyError):
    pass


@dataclass(frozen=True)
class ScoredChunk:
    chunk_id: int
    score: float
    # pair count of the chunk; selection assumes the full chunk size c
    # when this is omitted (only trailing partial chunks differ)
    rows: int | None = None


@dataclass(frozen=True)
class SelectionResult:
    selected: tuple[int, ...]  # descending score order
    pairs_used: int


def _probe_vector(probe) -> np.ndarray:
    if isinstance(probe, ProbeQuery):
        return probe.vector
    return np.asarray(probe)


def _chunk_list(source) -> Sequence[KVChunk]:
    # a cache view offers only chunks fully behind the local tail;
    # anything newer is already attendable and must not be retrieved twice
    if isinstance(source, CacheView):
        return source.retrievable
    return source


def _chunk_score(vec: np.ndarray, chunk: KVChunk, mode: str) -> float:
    try:
        if mode == "mean":
            return cosine(vec, chunk.rep_key)
        if mode == "max-score":
            return max(_safe_cosine(vec, row) for row in chunk.keys)
    except ZeroNorm:
        return 0.0
    raise ValueError(f"unknown representative mode {mode!r}")


def _safe_cosine(a, b) -> float:
    try:
        return cosine(a, b)
    except ZeroNorm:
        return 0.0


def score_chunks(probe, view, mode: str = "mean") -> list[ScoredChunk]:
    """One score per chunk of a view (or plain chunk sequence).

    Degenerate zero-norm pairs score 0. Empty view -> empty list.
    """
    vec = _probe_vector(probe)
    return [ScoredChunk(chunk_id=ch.chunk_id,
                        score=_chunk_score(vec, ch, mode),
                        rows=ch.rows)
            for ch in _chunk_list(view)]


def score_chunks_across_heads(probes, views, mode: str = "mean") -> list[ScoredChunk]:
    """Layer-level scores: arithmetic mean of per-head cosines per token span.

    probes and views are parallel sequences over heads; chunk lists must
    align (same spans in the same order), which holds for streams fed in
    lockstep by the engine.
    """
    per_head = [score_chunks(p, v, mode) for p, v in zip(probes, views)]
    if not per_head:
        return []
    n = len(per_head[0])
    if any(len(s) != n for s in per_head):
        raise ValueError("head chunk lists are not aligned")
    out = []
    for i in range(n):
        ids = {s[i].chunk_id for s in per_head}
        if len(ids) != 1:
            raise ValueError("head chunk ids disagree at position %d" % i)
        out.append(ScoredChunk(
            chunk_id=per_head[0][i].chunk_id,
            score=float(np.mean([s[i].score for s in per_head])),
            rows=per_head[0][i].rows,
        ))
    return out


def select_topk(scored: Sequence[ScoredChunk], budget_pairs: int,
                c: int) -> SelectionResult:
    """Greedy descending-score selection in whole chunks.

    Stops at the first chunk that would overflow budget_pairs; with
    uniform chunk size this equals the brute-force top floor(budget/c).
    """
    if budget_pairs < 0:
        raise ValueError("negative budget")
    order = sorted(scored, key=lambda s: (-s.score, s.chunk_id))
    taken: list[int] = []
    used = 0
    for s in order:
        rows = s.rows if s.rows is not None else c
        if used + rows > budget_pairs:
            break
        taken.append(s.chunk_id)
        used += rows
    return SelectionResult(selected=tuple(taken), pairs_used=used)


def materialize(selection: SelectionResult, view) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate selected chunks' K/V in ascending token position."""
    chunks = _chunk_list(view)
    by_id = {ch.chunk_id: ch for ch in chunks}
    picked = []
    for cid in selection.selected:
        if cid not in by_id:
            raise UnknownChunk(cid)
        picked.append(by_id[cid])
    picked.sort(key=lambda ch: ch.start)
    if chunks:
        dim = chunks[0].keys.shape[1]
    else:
        sinks = getattr(view, "sink_keys", None)
        dim = sinks.shape[1] if sinks is not None else 0
    if not picked:
        z = np.zeros((0, dim), dtype=np.float32)
        return z, z.copy()
    keys = np.concatenate([ch.keys for ch in picked], axis=0)
    values = np.concatenate([ch.values for ch in picked], axis=0)
    return keys, values
