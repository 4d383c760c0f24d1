"""Dense-array helpers shared by every other module.

All functions operate on plain numpy arrays (row-major, 2-D unless noted)
and are pure: no hidden state, no in-place mutation of inputs.
"""

from __future__ import annotations

import numpy as np

# Masking sentinel: logits at or below SENTINEL_CUTOFF get exactly zero
# softmax weight.  A finite value keeps the arithmetic exception-free.
NEG_LARGE = -1e30
SENTINEL_CUTOFF = -1e29


class SeededRng:
    """Counter-based generator; identical seed => identical stream."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, shape) -> np.ndarray:
        return self._gen.random(shape)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)

    def spawn(self, index: int) -> "SeededRng":
        # per-item derived stream; deterministic in (seed, index)
        return SeededRng(self.seed ^ (0x9E3779B97F4A7C15 * (index + 1) & 0xFFFFFFFFFFFFFFFF))


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction stabilization.

    Entries at or below SENTINEL_CUTOFF are treated as masked and receive
    exactly zero weight.  A row with every entry masked is an error
    (the result would be 0/0).
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected 2-D array, got shape {m.shape}")
    masked = m <= SENTINEL_CUTOFF
    if np.any(masked.all(axis=1)):
        raise ValueError("softmax row has every entry masked")
    shifted = np.where(masked, -np.inf, m)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    e[masked] = 0.0
    return e / e.sum(axis=1, keepdims=True)


def logsumexp_rows(m: np.ndarray) -> np.ndarray:
    """Per-row log(sum(exp(.))) with the same masking rule as softmax_rows."""
    m = np.asarray(m, dtype=np.float64)
    masked = m <= SENTINEL_CUTOFF
    if np.any(masked.all(axis=1)):
        raise ValueError("logsumexp row has every entry masked")
    shifted = np.where(masked, -np.inf, m)
    row_max = shifted.max(axis=1, keepdims=True)
    e = np.exp(shifted - row_max)
    e[masked] = 0.0
    return row_max[:, 0] + np.log(e.sum(axis=1))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def cosine_similarity_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("cosine similarity undefined for zero rows")
    return np.clip((a * b).sum(axis=1) / (na * nb), -1.0, 1.0)


def gaussian_noise(rng: SeededRng, shape) -> np.ndarray:
    return rng.normal(shape)
