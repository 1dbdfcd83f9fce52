"""Topic segmentation of a conversation by divisive clustering of the
rank-transformed utterance similarity matrix.

Pipeline: cosine similarities -> local rank transform -> greedy divisive
splitting that maximizes inside density -> segment-count selection from the
density gradient profile. Blocks are 1-based inclusive (start, end) pairs
that partition 1..m in order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Conversation
from .embed import EmbeddingMatrix, cosine_matrix


@dataclass(frozen=True)
class C99Config:
    window: int = 4         # rank mask side length; radius is window // 2
    std_coeff: float = 1.0  # c in the stopping threshold mean + c * std
    max_segments: int | None = None

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("rank window must be at least 2")
        if not np.isfinite(self.std_coeff):
            raise ValueError("std_coeff must be finite")
        if self.max_segments is not None and self.max_segments < 1:
            raise ValueError("max_segments must be positive")


def rank_transform(sim: np.ndarray, window: int = 4) -> np.ndarray:
    """Replace each entry by the fraction of its in-bounds neighbors (within
    Chebyshev radius window // 2, itself excluded) that are strictly smaller.

    Entries with no in-bounds neighbors (the 1x1 case) become 0.
    """
    S = np.asarray(sim, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("similarity matrix must be square")
    if window < 2:
        raise ValueError("rank window must be at least 2")
    m = S.shape[0]
    radius = window // 2
    lower = np.zeros((m, m), dtype=np.float64)
    count = np.zeros((m, m), dtype=np.float64)
    for di in range(-radius, radius + 1):
        for dj in range(-radius, radius + 1):
            if di == 0 and dj == 0:
                continue
            r0, r1 = max(0, -di), m - max(0, di)
            c0, c1 = max(0, -dj), m - max(0, dj)
            if r0 >= r1 or c0 >= c1:
                continue
            center = S[r0:r1, c0:c1]
            neighbor = S[r0 + di : r1 + di, c0 + dj : c1 + dj]
            lower[r0:r1, c0:c1] += neighbor < center
            count[r0:r1, c0:c1] += 1.0
    return np.divide(lower, count, out=np.zeros_like(lower), where=count > 0)


def _to_one_based(blocks: list[tuple[int, int]]) -> tuple[tuple[int, int], ...]:
    return tuple((a + 1, b + 1) for a, b in blocks)


def divisive_segment(
    rank: np.ndarray, max_segments: int | None = None
) -> list[tuple[int, float, tuple[tuple[int, int], ...]]]:
    """Greedy divisive segmentation of a rank matrix.

    Starting from one block covering everything, repeatedly apply the single
    split that maximizes inside density D = (sum of within-block rank mass) /
    (sum of squared block lengths), ties broken toward the smallest boundary
    index. Returns the trace [(n, D_n, blocks)] for n = 1 .. limit.
    """
    R = np.asarray(rank, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ValueError("rank matrix must be square")
    m = R.shape[0]
    if m < 1:
        raise ValueError("rank matrix must be non-empty")
    limit = m if max_segments is None else min(max_segments, m)

    # 2-d prefix sums: P[i, j] = sum of R[:i, :j]; block mass in O(1).
    P = np.zeros((m + 1, m + 1), dtype=np.float64)
    P[1:, 1:] = R.cumsum(axis=0).cumsum(axis=1)

    def mass(a: int, b: int) -> float:
        # inclusive 0-based square [a..b] x [a..b]
        return P[b + 1, b + 1] - P[a, b + 1] - P[b + 1, a] + P[a, a]

    blocks: list[tuple[int, int]] = [(0, m - 1)]
    total_mass = mass(0, m - 1)
    total_area = float(m * m)
    trace = [(1, total_mass / total_area, _to_one_based(blocks))]

    for n in range(2, limit + 1):
        best: tuple[float, int, int] | None = None  # (density, boundary, block idx)
        for bi, (a, b) in enumerate(blocks):
            if a == b:
                continue
            base_mass = total_mass - mass(a, b)
            base_area = total_area - (b - a + 1) ** 2
            for p in range(a + 1, b + 1):
                new_mass = base_mass + mass(a, p - 1) + mass(p, b)
                new_area = base_area + (p - a) ** 2 + (b - p + 1) ** 2
                d = new_mass / new_area
                if best is None or d > best[0] or (d == best[0] and p < best[1]):
                    best = (d, p, bi)
        if best is None:  # every block is a single utterance
            break
        d, p, bi = best
        a, b = blocks[bi]
        total_mass = total_mass - mass(a, b) + mass(a, p - 1) + mass(p, b)
        total_area = total_area - (b - a + 1) ** 2 + (p - a) ** 2 + (b - p + 1) ** 2
        blocks[bi : bi + 1] = [(a, p - 1), (p, b)]
        trace.append((n, d, _to_one_based(blocks)))
    return trace


def choose_segment_count(
    trace: list[tuple[int, float, tuple[tuple[int, int], ...]]],
    std_coeff: float = 1.0,
) -> tuple[tuple[int, int], ...]:
    """Pick n* from a divisive trace by density gradients.

    delta D(n) = D_n - D_{n-1}; threshold tau = mean + std_coeff * std over
    the gradients (population std); n* is the largest n whose gradient
    exceeds tau, defaulting to 1 when none does.
    """
    if not trace:
        raise ValueError("empty segmentation trace")
    if len(trace) == 1:
        return trace[0][2]
    densities = np.array([d for _, d, _ in trace], dtype=np.float64)
    grads = np.diff(densities)
    tau = grads.mean() + std_coeff * grads.std()
    chosen = 1
    for i, g in enumerate(grads):
        if g > tau:
            chosen = i + 2  # grads[i] moves from i+1 to i+2 segments
    return trace[chosen - 1][2]


def topic_view(
    conv: Conversation, emb: EmbeddingMatrix, cfg: C99Config = C99Config()
) -> tuple[tuple[int, int], ...]:
    """Topic blocks for one conversation from its utterance embeddings."""
    m = len(conv.utterances)
    if emb.matrix.shape[0] != m:
        raise ValueError(
            f"conversation {conv.id!r}: {emb.matrix.shape[0]} embedding rows "
            f"for {m} utterances"
        )
    sims = cosine_matrix(emb)
    ranks = rank_transform(sims, cfg.window)
    trace = divisive_segment(ranks, cfg.max_segments)
    return choose_segment_count(trace, cfg.std_coeff)
