"""Strategies for choosing which weight columns become partial connections.

Three strategies: uniform random (the default), largest column L2 norm of
the initial weights, and largest accumulated squared gradient norm over a
warmup phase run without weight updates.

Random selection must reproduce bit-for-bit across platforms and languages,
so it does not rely on numpy's generator. It uses SplitMix64 (Steele et al.,
the java.util.SplittableRandom mixer) plus a map-based partial Fisher-Yates
shuffle; the exact algorithm is documented on ``select_random`` so it can be
re-implemented elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .tensor import IndexSet

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class SplitMix64:
    """SplitMix64 stream: state += 0x9E3779B97F4A7C15 per draw, then mix."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_below(self, bound: int) -> int:
        """Uniform integer in [0, bound) via rejection (no modulo bias)."""
        if bound <= 0:
            raise ValueError(f"bound must be positive, got {bound}")
        threshold = _MASK64 + 1 - ((_MASK64 + 1) % bound)
        while True:
            x = self.next_u64()
            if x < threshold:
                return x % bound


def derive_seed(base_seed: int, ordinal: int) -> int:
    """Per-layer seed: one SplitMix64 draw from base_seed + (ordinal+1)*golden."""
    return SplitMix64((base_seed + (ordinal + 1) * _GOLDEN) & _MASK64).next_u64()


@dataclass
class GradStats:
    """Per-column accumulated squared gradient norms for one layer."""

    sums: np.ndarray
    steps_accumulated: int = 0

    @classmethod
    def zeros(cls, d_in: int) -> "GradStats":
        return cls(sums=np.zeros(d_in, dtype=np.float64))


@dataclass(frozen=True)
class SelectionConfig:
    strategy: str = "random"  # random | weight_norm | gradient
    rank: int = 1
    seed: int = 0
    warmup_steps: int = 100  # gradient strategy only

    STRATEGIES = ("random", "weight_norm", "gradient")

    def __post_init__(self):
        if self.strategy not in self.STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if self.warmup_steps < 1:
            raise ValueError(f"warmup_steps must be >= 1, got {self.warmup_steps}")


def select_random(d_in: int, r: int, seed: int) -> IndexSet:
    """Select r distinct columns of d_in uniformly at random.

    Algorithm (fixed for reproducibility): draw k_j = j + u_j for
    j = 0..r-1, where u_j is a rejection-sampled SplitMix64 integer in
    [0, d_in - j); apply the classic sparse Fisher-Yates swap via a
    hash map of displaced entries; sort the r picks.
    """
    if not 1 <= r <= d_in:
        raise ValueError(f"need 1 <= r <= d_in, got r={r}, d_in={d_in}")
    if r == d_in:
        return IndexSet.full(d_in)
    rng = SplitMix64(seed)
    displaced: dict[int, int] = {}
    picks = []
    for j in range(r):
        k = j + rng.next_below(d_in - j)
        picks.append(displaced.get(k, k))
        displaced[k] = displaced.get(j, j)
    return IndexSet(tuple(sorted(picks)), d_in)


def _top_r_low_tie(scores: np.ndarray, r: int) -> IndexSet:
    # stable sort on descending score keeps lower indices first among ties
    order = np.argsort(-scores, kind="stable")
    return IndexSet(tuple(sorted(int(i) for i in order[:r])), len(scores))


def select_by_weight_norm(w: np.ndarray, r: int) -> IndexSet:
    """The r columns of w with largest L2 norm; ties go to the lower index."""
    if not 1 <= r <= w.shape[1]:
        raise ValueError(f"need 1 <= r <= cols, got r={r}, cols={w.shape[1]}")
    norms = np.linalg.norm(w, axis=0)
    return _top_r_low_tie(norms, r)


def accumulate_grad_stats(stats: GradStats, g_w: np.ndarray) -> GradStats:
    """Add each column's squared L2 norm of g_w into the accumulators.

    Weights must not be updated while accumulating; the caller owns that.
    """
    if g_w.shape[1] != stats.sums.shape[0]:
        raise ShapeError(
            f"gradient has {g_w.shape[1]} columns, stats track {stats.sums.shape[0]}"
        )
    stats.sums += np.square(g_w.astype(np.float64, copy=False)).sum(axis=0)
    stats.steps_accumulated += 1
    return stats


def select_by_grad(stats: GradStats, r: int) -> IndexSet:
    """The r columns with largest accumulated squared gradient norm."""
    if stats.steps_accumulated < 1:
        raise ValueError("no gradient statistics accumulated yet")
    if not 1 <= r <= stats.sums.shape[0]:
        raise ValueError(f"need 1 <= r <= {stats.sums.shape[0]}, got r={r}")
    return _top_r_low_tie(stats.sums, r)
