"""Brute-force reference implementations the tests check against.

Everything here is deliberately naive: path enumeration instead of dynamic
programming, neighbor re-counting instead of vectorized shifts, subsequence
enumeration instead of the LCS table. Slow and obviously correct.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def gaussian_logpdf(x: np.ndarray, mean: np.ndarray, var: np.ndarray) -> float:
    """Diagonal-covariance normal, written out from the density formula."""
    x = np.asarray(x, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    d = x.shape[0]
    quad = float(np.sum((x - mean) ** 2 / var))
    return -0.5 * (quad + float(np.sum(np.log(var))) + d * math.log(2.0 * math.pi))


def monotone_paths(n_states: int, length: int):
    """All 0-based state paths that start anywhere and move by 0 or +1."""
    for start in range(n_states):
        for advances in itertools.product((0, 1), repeat=length - 1):
            path = [start]
            for a in advances:
                path.append(path[-1] + a)
            if path[-1] < n_states:
                yield tuple(path)


def path_score(path, log_init, log_trans, means, vars_, obs) -> float:
    s = float(log_init[path[0]]) + gaussian_logpdf(obs[0], means[path[0]], vars_[path[0]])
    for t in range(1, len(path)):
        s += float(log_trans[path[t - 1], path[t]])
        s += gaussian_logpdf(obs[t], means[path[t]], vars_[path[t]])
    return s


def brute_forward(log_init, log_trans, means, vars_, obs) -> float:
    K = means.shape[0]
    scores = [
        path_score(p, log_init, log_trans, means, vars_, obs)
        for p in monotone_paths(K, obs.shape[0])
    ]
    finite = [s for s in scores if math.isfinite(s)]
    if not finite:
        return -math.inf
    return float(np.logaddexp.reduce(sorted(finite)))


def brute_viterbi(log_init, log_trans, means, vars_, obs):
    """Best monotone path; exact ties resolved toward the path whose states
    read lowest from the final step backwards."""
    K = means.shape[0]
    best_score = -math.inf
    best = None
    for p in monotone_paths(K, obs.shape[0]):
        s = path_score(p, log_init, log_trans, means, vars_, obs)
        key = tuple(reversed(p))
        if s > best_score or (s == best_score and (best is None or key < best[0])):
            best_score = s
            best = (key, p)
    return tuple(q + 1 for q in best[1]), best_score


def naive_rank(S: np.ndarray, window: int) -> np.ndarray:
    """Fraction of in-bounds Chebyshev neighbors strictly smaller, by loops."""
    m = S.shape[0]
    r = window // 2
    out = np.zeros((m, m), dtype=np.float64)
    for i in range(m):
        for j in range(m):
            smaller = 0
            total = 0
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    if di == 0 and dj == 0:
                        continue
                    a, b = i + di, j + dj
                    if 0 <= a < m and 0 <= b < m:
                        total += 1
                        if S[a, b] < S[i, j]:
                            smaller += 1
            out[i, j] = smaller / total if total else 0.0
    return out


def naive_density(R: np.ndarray, blocks) -> float:
    """Inside density recomputed from its definition on 1-based blocks."""
    num = 0.0
    den = 0.0
    for a, b in blocks:
        sub = R[a - 1 : b, a - 1 : b]
        num += float(sub.sum())
        den += float((b - a + 1) ** 2)
    return num / den


def brute_lcs(a: list, b: list) -> int:
    """Longest common subsequence by enumerating subsequences of a."""
    best = 0
    for mask in range(1 << len(a)):
        sub = [a[i] for i in range(len(a)) if mask >> i & 1]
        it = iter(b)
        if all(tok in it for tok in sub):
            best = max(best, len(sub))
    return best
