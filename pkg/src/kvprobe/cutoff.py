"""Decoding-stage dynamic KV cut-off.

Each layer's information density is the entropy of its softmax-
normalized chunk scores: a flat score distribution means the probe
cannot tell chunks apart and the layer needs a bigger slice of the
shared budget. Budgets are assigned in one shallow-to-deep pass,

    B_l = theta_l / (theta_l + sum of remaining layers' theta) * remaining,

decrementing the remaining pool after each layer; the final layer
absorbs whatever is left, so the real-valued budgets conserve the
initial total exactly. Integerization uses largest-remainder
apportionment in chunk units, which preserves that total.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .linalg import entropy, softmax
from .retrieval import ScoredChunk, SelectionResult, select_topk


@dataclass(frozen=True)
class DensityProfile:
    theta: tuple[float, ...]
    n_per_layer: tuple[int, ...]


@dataclass(frozen=True)
class BudgetAllocation:
    budgets: tuple[int, ...]
    initial_total: int


def _score_values(scores) -> list[float]:
    return [s.score if isinstance(s, ScoredChunk) else float(s) for s in scores]


def layer_density(scores) -> float:
    """Entropy (nats) of softmax over one layer's chunk scores; 0 for an
    empty layer (nothing cached to tell apart)."""
    vals = _score_values(scores)
    if not vals:
        return 0.0
    return entropy(softmax(vals))


def density_profile(per_layer_scores: Sequence[Sequence]) -> DensityProfile:
    vals = [_score_values(s) for s in per_layer_scores]
    return DensityProfile(theta=tuple(layer_density(v) for v in vals),
                          n_per_layer=tuple(len(v) for v in vals))


def allocate(theta, initial_total: int, chunk_size: int = 1) -> BudgetAllocation:
    """Split initial_total KV pairs across layers by information density.

    theta may be a DensityProfile or a plain sequence of densities.
    chunk_size > 1 apportions in whole chunks (initial_total must then
    be divisible by it; the engine passes c, which divides L*k). With
    all densities zero the split is equal, the uniform-density limit.
    """
    if isinstance(theta, DensityProfile):
        th = [float(t) for t in theta.theta]
    else:
        th = [float(t) for t in theta]
    n_layers = len(th)
    if n_layers < 1:
        raise ValueError("allocate needs at least one layer")
    if initial_total < 0:
        raise ValueError("negative budget total")
    if chunk_size < 1:
        raise ValueError("chunk_size must be positive")
    if initial_total % chunk_size != 0:
        raise ValueError(
            f"total {initial_total} not divisible by chunk size {chunk_size}")
    if any(t < 0 for t in th):
        raise ValueError("negative density")

    real = [0.0] * n_layers
    remaining = float(initial_total)
    for layer in range(n_layers):
        denom = th[layer] + sum(th[layer + 1:])
        if denom <= 0.0:
            # every remaining layer has zero density: equal split of the rest
            share = remaining / (n_layers - layer)
            for j in range(layer, n_layers):
                real[j] = share
            break
        real[layer] = th[layer] / denom * remaining
        remaining = max(0.0, remaining - real[layer])

    units = initial_total // chunk_size
    shares = [r / chunk_size for r in real]
    floors = [math.floor(s) for s in shares]
    leftover = units - sum(floors)
    assert 0 <= leftover <= n_layers, "apportionment drifted"
    by_remainder = sorted(range(n_layers),
                          key=lambda i: (-(shares[i] - floors[i]), i))
    for i in by_remainder[:leftover]:
        floors[i] += 1
    return BudgetAllocation(budgets=tuple(f * chunk_size for f in floors),
                            initial_total=initial_total)


def recall_layer(scored: Sequence[ScoredChunk], budget_pairs: int,
                 c: int) -> SelectionResult:
    """Select one layer's chunks under its dynamic budget."""
    return select_topk(scored, budget_pairs, c)
