"""Retrieval engine: probes, chunk scoring, budget split, attention.

Two stages over a trace:

pre-filling
    Windows arrive a block of rows at a time. Each layer folds the
    window's queries (plus any task queries) into its running
    statistics, builds one probe per head, scores the retrievable
    chunks, greedily selects up to the layer budget, and runs
    reference attention over [sinks, retrieved, local tail, window]
    with a causal mask on the window rows. The window's keys and
    values enter the cache only after attention.

decoding
    One token at a time, two phases. First every layer scores its
    candidates with the raw query and reports the entropy of the
    score distribution; then the shared budget (layers x budget) is
    split across layers, evenly in fixed mode or entropy-proportional
    in dynamic mode, and each layer retrieves under its share. The
    token's key/value pair enters the cache before attention so the
    local tail covers the token itself; the attended set is exactly
    sinks + retrieved + local.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from math import sqrt
from typing import Iterable

import numpy as np

from .cache import LayerCache
from .cutoff import allocate, layer_density, recall_layer
from .linalg import EmptyInput, as_matrix
from .probe import (ProbeQuery, StatsUndefined, StreamingStats,
                    activation_bias, build_probe, decoding_probe,
                    uniform_bias)
from .retrieval import materialize, score_chunks_across_heads
from .tracefile import TraceData

PROBE_MODES = ("act", "mean")
CUTOFF_MODES = ("dynamic", "fixed")
REP_MODES = ("mean", "max-score")


class ConfigError(ValueError):
    """Engine configuration rejected."""


@dataclass(frozen=True)
class EngineConfig:
    d: int
    layers: int
    heads: int = 1
    window: int = 256
    chunk: int = 32
    n_sink: int = 64
    n_local: int = 512
    budget: int = 1472
    probe_mode: str = "act"
    cutoff_mode: str = "dynamic"
    rep_mode: str = "mean"

    def __post_init__(self):
        if min(self.d, self.layers, self.heads, self.window, self.chunk) < 1:
            raise ConfigError("dimensions must be positive")
        if self.n_sink < 0 or self.n_local < 0 or self.budget < 0:
            raise ConfigError("capacities must be non-negative")
        if self.d % self.heads != 0:
            raise ConfigError(f"d={self.d} not divisible by heads={self.heads}")
        if self.budget % self.chunk != 0:
            raise ConfigError(
                f"budget {self.budget} not a multiple of chunk {self.chunk}")
        mode = {"activation": "act"}.get(self.probe_mode, self.probe_mode)
        if mode not in PROBE_MODES:
            raise ConfigError(f"probe_mode {self.probe_mode!r} not in "
                              f"{PROBE_MODES}")
        object.__setattr__(self, "probe_mode", mode)
        if self.cutoff_mode not in CUTOFF_MODES:
            raise ConfigError(f"cutoff_mode {self.cutoff_mode!r} not in "
                              f"{CUTOFF_MODES}")
        if self.rep_mode not in REP_MODES:
            raise ConfigError(f"rep_mode {self.rep_mode!r} not in {REP_MODES}")

    @property
    def d_head(self) -> int:
        return self.d // self.heads

    @property
    def total_budget(self) -> int:
        """Shared pair budget split across layers at each decode step."""
        return self.layers * self.budget

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LayerStepRecord:
    layer: int
    candidate_ids: tuple[int, ...]
    scores: tuple[float, ...]
    theta: float
    budget_pairs: int
    selected: tuple[int, ...]
    pairs_used: int
    attended_pairs: int
    attn_checksum: float

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class StepRecord:
    stage: str  # "pre-filling" | "decoding"
    index: int
    layers: tuple[LayerStepRecord, ...]

    def to_json(self) -> dict:
        return {"stage": self.stage, "index": self.index,
                "layers": [rec.to_json() for rec in self.layers]}


@dataclass(frozen=True)
class RunResult:
    config: EngineConfig
    steps: tuple[StepRecord, ...]

    def layer_records(self, stage: str | None = None
                      ) -> Iterable[tuple[StepRecord, LayerStepRecord]]:
        for step in self.steps:
            if stage is not None and step.stage != stage:
                continue
            for rec in step.layers:
                yield step, rec


def reference_attention(q, k, v, causal: bool = True) -> np.ndarray:
    """Exact scaled dot-product attention in float64.

    With causal=True the trailing q.rows keys are treated as the
    queries' own positions: query i may attend key j iff
    j <= (k.rows - q.rows) + i. History keys (everything before the
    trailing block) are visible to every query.
    """
    Q = as_matrix(q)
    K = as_matrix(k, cols=Q.shape[1])
    V = as_matrix(v)
    if K.shape[0] != V.shape[0]:
        raise EmptyInput(f"keys/values row mismatch {K.shape[0]} vs "
                         f"{V.shape[0]}")
    if K.shape[0] == 0:
        raise EmptyInput("attention over zero keys")
    n_hist = K.shape[0] - Q.shape[0]
    if causal and n_hist < 0:
        raise EmptyInput("more queries than keys under a causal mask")
    logits = (Q.astype(np.float64) @ K.astype(np.float64).T) / sqrt(Q.shape[1])
    if causal:
        cols = np.arange(K.shape[0])[None, :]
        rows = np.arange(Q.shape[0])[:, None]
        logits = np.where(cols > n_hist + rows, -np.inf, logits)
    logits -= logits.max(axis=1, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=1, keepdims=True)
    return weights @ V.astype(np.float64)


class Engine:
    """Stateful run over one trace; not reusable across traces."""

    def __init__(self, config: EngineConfig,
                 task_queries: np.ndarray | None = None):
        self.config = config
        L, H = config.layers, config.heads
        self.caches = [[LayerCache(dim=config.d_head, n_sink=config.n_sink,
                                   n_local=config.n_local, chunk=config.chunk,
                                   layer=l, head=h)
                        for h in range(H)] for l in range(L)]
        self.stats = [[StreamingStats(config.d_head) for _ in range(H)]
                      for _ in range(L)]
        if task_queries is not None:
            task_queries = np.asarray(task_queries, dtype=np.float32)
            want = (L, H, task_queries.shape[2], config.d_head)
            if task_queries.ndim != 4 or tuple(task_queries.shape) != want:
                raise ConfigError(f"task queries shape "
                                  f"{task_queries.shape}, want {want}")
        self.task_queries = task_queries
        self.steps: list[StepRecord] = []

    # -- stage steps --------------------------------------------------

    def _probe_for(self, layer: int, head: int,
                   queries: np.ndarray) -> ProbeQuery:
        stats = self.stats[layer][head]
        if self.config.probe_mode == "act":
            try:
                bias = activation_bias(queries, stats)
            except StatsUndefined:
                bias = uniform_bias(queries.shape[0], queries.shape[1])
        else:
            bias = uniform_bias(queries.shape[0], queries.shape[1])
        return build_probe(queries, bias, layer=layer, head=head)

    def prefill_step(self, window_q: np.ndarray, window_k: np.ndarray,
                     window_v: np.ndarray, index: int) -> StepRecord:
        """window_* have shape (layers, heads, rows, d_head)."""
        cfg = self.config
        recs = []
        for l in range(cfg.layers):
            probes, views = [], []
            for h in range(cfg.heads):
                q_eff = window_q[l, h]
                if self.task_queries is not None:
                    q_eff = np.concatenate([q_eff, self.task_queries[l, h]])
                self.stats[l][h].update(q_eff)
                probes.append(self._probe_for(l, h, q_eff))
                views.append(self.caches[l][h].snapshot())
            scored = score_chunks_across_heads(probes, views,
                                               mode=cfg.rep_mode)
            theta = layer_density(scored)
            selection = recall_layer(scored, cfg.budget, cfg.chunk)
            checksum = 0.0
            attended = 0
            for h in range(cfg.heads):
                view = views[h]
                keys_sel, vals_sel = materialize(selection, view)
                k_att = np.concatenate([view.sink_keys, keys_sel,
                                        view.local_keys, window_k[l, h]])
                v_att = np.concatenate([view.sink_values, vals_sel,
                                        view.local_values, window_v[l, h]])
                out = reference_attention(window_q[l, h], k_att, v_att,
                                          causal=True)
                checksum += float(out.sum())
                attended = k_att.shape[0]
                self.caches[l][h].append(window_k[l, h], window_v[l, h])
            recs.append(LayerStepRecord(
                layer=l,
                candidate_ids=tuple(sc.chunk_id for sc in scored),
                scores=tuple(float(sc.score) for sc in scored),
                theta=float(theta),
                budget_pairs=cfg.budget,
                selected=selection.selected,
                pairs_used=selection.pairs_used,
                attended_pairs=attended,
                attn_checksum=checksum,
            ))
        step = StepRecord(stage="pre-filling", index=index, layers=tuple(recs))
        self.steps.append(step)
        return step

    def decode_step(self, q: np.ndarray, k: np.ndarray, v: np.ndarray,
                    index: int) -> StepRecord:
        """q, k, v have shape (layers, heads, 1, d_head)."""
        cfg = self.config
        per_layer: list[list] = []
        thetas: list[float] = []
        for l in range(cfg.layers):
            probes, views = [], []
            for h in range(cfg.heads):
                probes.append(decoding_probe(q[l, h, 0], layer=l, head=h))
                views.append(self.caches[l][h].snapshot())
            scored = score_chunks_across_heads(probes, views,
                                               mode=cfg.rep_mode)
            per_layer.append(scored)
            thetas.append(layer_density(scored))
        if cfg.cutoff_mode == "dynamic":
            budgets = allocate(thetas, cfg.total_budget,
                               chunk_size=cfg.chunk).budgets
        else:
            budgets = tuple(cfg.budget for _ in range(cfg.layers))
        recs = []
        for l in range(cfg.layers):
            selection = recall_layer(per_layer[l], budgets[l], cfg.chunk)
            checksum = 0.0
            attended = 0
            for h in range(cfg.heads):
                self.caches[l][h].append(k[l, h], v[l, h])
                view = self.caches[l][h].snapshot()
                keys_sel, vals_sel = materialize(selection, view)
                k_att = np.concatenate([view.sink_keys, keys_sel,
                                        view.local_keys])
                v_att = np.concatenate([view.sink_values, vals_sel,
                                        view.local_values])
                out = reference_attention(q[l, h], k_att, v_att, causal=True)
                checksum += float(out.sum())
                attended = k_att.shape[0]
            recs.append(LayerStepRecord(
                layer=l,
                candidate_ids=tuple(sc.chunk_id for sc in per_layer[l]),
                scores=tuple(float(sc.score) for sc in per_layer[l]),
                theta=float(thetas[l]),
                budget_pairs=int(budgets[l]),
                selected=selection.selected,
                pairs_used=selection.pairs_used,
                attended_pairs=attended,
                attn_checksum=checksum,
            ))
        step = StepRecord(stage="decoding", index=index, layers=tuple(recs))
        self.steps.append(step)
        return step

    # -- drivers ------------------------------------------------------

    def run(self, trace: TraceData) -> RunResult:
        h = trace.header
        cfg = self.config
        if (h.d, h.layers, h.heads) != (cfg.d, cfg.layers, cfg.heads):
            raise ConfigError(
                f"trace is d={h.d} layers={h.layers} heads={h.heads}; engine "
                f"configured d={cfg.d} layers={cfg.layers} heads={cfg.heads}")
        if h.window != cfg.window:
            raise ConfigError(f"trace window {h.window} != configured "
                              f"{cfg.window}")
        for blk in trace.blocks():
            if blk.stage == "pre-filling":
                self.prefill_step(blk.q, blk.k, blk.v, blk.index)
            else:
                self.decode_step(blk.q, blk.k, blk.v, blk.index)
        return RunResult(config=cfg, steps=tuple(self.steps))


def run_trace(trace: TraceData, config: EngineConfig) -> RunResult:
    engine = Engine(config, task_queries=trace.task_queries)
    return engine.run(trace)
