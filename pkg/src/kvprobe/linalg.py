"""Dense numeric kernels shared by every other module.

Vectors are 1-D float32 numpy arrays, matrices 2-D float32 row-major.
All reductions accumulate in float64 and only the stored payloads are
kept in float32, so results are reproducible across platforms at the
dimensions this engine targets (d <= 4096).
"""

from __future__ import annotations

import numpy as np

ZERO_NORM_EPS = 1e-12


class ZeroNorm(ValueError):
    """Both vectors are numerically zero; no direction to compare."""


class EmptyInput(ValueError):
    pass


class NotNormalized(ValueError):
    """Input is not a probability distribution."""


class DimMismatch(ValueError):
    pass


def as_vector(x, dim: int | None = None) -> np.ndarray:
    v = np.asarray(x, dtype=np.float32)
    if v.ndim != 1:
        raise DimMismatch(f"expected 1-D vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise DimMismatch(f"expected dim {dim}, got {v.shape[0]}")
    return v


def as_matrix(x, cols: int | None = None) -> np.ndarray:
    m = np.asarray(x, dtype=np.float32)
    if m.ndim != 2:
        raise DimMismatch(f"expected 2-D matrix, got shape {m.shape}")
    if cols is not None and m.shape[1] != cols:
        raise DimMismatch(f"expected {cols} columns, got {m.shape[1]}")
    return m


def l1_norm(v) -> float:
    return float(np.sum(np.abs(np.asarray(v, dtype=np.float64))))


def l2_norm(v) -> float:
    x = np.asarray(v, dtype=np.float64)
    return float(np.sqrt(np.sum(x * x)))


def cosine(a, b) -> float:
    """Cosine similarity of two vectors, in [-1, 1].

    Raises ZeroNorm when both norms fall below 1e-12 (degenerate pair;
    callers scoring chunks substitute 0). If exactly one side is zero
    the pair carries no directional information either, and the score
    is 0 by convention.
    """
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.shape != bv.shape:
        raise DimMismatch(f"cosine dims differ: {av.shape} vs {bv.shape}")
    na = np.sqrt(np.sum(av * av))
    nb = np.sqrt(np.sum(bv * bv))
    if na < ZERO_NORM_EPS and nb < ZERO_NORM_EPS:
        raise ZeroNorm("both vectors have norm below 1e-12")
    if na < ZERO_NORM_EPS or nb < ZERO_NORM_EPS:
        return 0.0
    c = float(np.dot(av, bv) / (na * nb))
    # guard float round-off just outside the interval
    return min(1.0, max(-1.0, c))


def softmax(scores) -> np.ndarray:
    """Probabilities proportional to exp(score), stabilized by max-subtraction."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise EmptyInput("softmax of empty score list")
    if not np.all(np.isfinite(s)):
        raise NotNormalized("softmax input contains non-finite entries")
    e = np.exp(s - np.max(s))
    return e / np.sum(e)


def entropy(probs) -> float:
    """Shannon entropy in nats, with 0*log(0) = 0."""
    p = np.asarray(probs, dtype=np.float64).ravel()
    if p.size == 0:
        raise EmptyInput("entropy of empty distribution")
    if np.any(p < 0):
        raise NotNormalized("negative probability entry")
    total = float(np.sum(p))
    if abs(total - 1.0) > 1e-4:
        raise NotNormalized(f"probabilities sum to {total}, not 1")
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))
