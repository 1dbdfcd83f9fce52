"""Conversation-stage segmentation with a left-to-right Gaussian HMM.

States model dialogue phases that only move forward: from state i the chain
may stay at i or advance to i+1 (the last state only stays). Emissions are
diagonal Gaussians over utterance embeddings. All chain arithmetic is in
log space.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .corpus import Conversation
from .embed import EmbeddingMatrix

VAR_FLOOR = 1e-3
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class HmmModel:
    means: np.ndarray      # (K, d)
    vars: np.ndarray       # (K, d), floored at VAR_FLOOR
    log_trans: np.ndarray  # (K, K); -inf outside the {stay, advance} band
    log_init: np.ndarray   # (K,); all mass on state 1

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.vars = np.asarray(self.vars, dtype=np.float64)
        self.log_trans = np.asarray(self.log_trans, dtype=np.float64)
        self.log_init = np.asarray(self.log_init, dtype=np.float64)
        k, d = self.means.shape
        if self.vars.shape != (k, d):
            raise ValueError("means and vars shapes differ")
        if self.log_trans.shape != (k, k) or self.log_init.shape != (k,):
            raise ValueError("transition or init shape does not match state count")
        if np.any(self.vars < VAR_FLOOR - 1e-12):
            raise ValueError(f"variances must be floored at {VAR_FLOOR}")

    @property
    def n_states(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def save(self, path: str) -> None:
        blob = {
            "states": int(self.n_states),
            "dim": int(self.dim),
            "means": self.means.tolist(),
            "vars": self.vars.tolist(),
            "trans": np.exp(self.log_trans).tolist(),
            "init": np.exp(self.log_init).tolist(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(blob, fh)

    @classmethod
    def load(cls, path: str) -> "HmmModel":
        with open(path, encoding="utf-8") as fh:
            blob = json.load(fh)
        with np.errstate(divide="ignore"):
            log_trans = np.log(np.asarray(blob["trans"], dtype=np.float64))
            log_init = np.log(np.asarray(blob["init"], dtype=np.float64))
        return cls(
            means=np.asarray(blob["means"], dtype=np.float64),
            vars=np.asarray(blob["vars"], dtype=np.float64),
            log_trans=log_trans,
            log_init=log_init,
        )


def _check_obs(model: HmmModel, obs: np.ndarray) -> np.ndarray:
    x = np.asarray(obs, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("observations must be a 2-d (n, d) array")
    if x.shape[0] == 0:
        raise ValueError("empty observation sequence")
    if x.shape[1] != model.dim:
        raise ValueError(f"observation dim {x.shape[1]} != model dim {model.dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("observations contain non-finite values")
    return x


def log_emissions(model: HmmModel, obs: np.ndarray) -> np.ndarray:
    """log N(x_t | mu_k, diag(var_k)) for every (t, k); shape (n, K)."""
    x = _check_obs(model, obs)
    diff = x[:, None, :] - model.means[None, :, :]           # (n, K, d)
    quad = np.sum(diff * diff / model.vars[None, :, :], axis=2)
    logdet = np.sum(np.log(model.vars), axis=1)              # (K,)
    return -0.5 * (quad + logdet[None, :] + model.dim * LOG_2PI)


def forward(model: HmmModel, obs: np.ndarray) -> tuple[np.ndarray, float]:
    """Log-space forward recursion. Returns (alpha, loglik) where
    alpha[t, k] = log p(x_1..t, z_t = k)."""
    emit = log_emissions(model, obs)
    n, K = emit.shape
    alpha = np.full((n, K), -np.inf)
    alpha[0] = model.log_init + emit[0]
    for t in range(1, n):
        stay = alpha[t - 1] + np.diag(model.log_trans)
        move = np.full(K, -np.inf)
        move[1:] = alpha[t - 1, :-1] + np.diag(model.log_trans, k=1)
        alpha[t] = np.logaddexp(stay, move) + emit[t]
    return alpha, float(np.logaddexp.reduce(alpha[-1]))


def backward(model: HmmModel, obs: np.ndarray) -> np.ndarray:
    """beta[t, k] = log p(x_{t+1}..n | z_t = k)."""
    emit = log_emissions(model, obs)
    n, K = emit.shape
    beta = np.full((n, K), -np.inf)
    beta[-1] = 0.0
    stay_lp = np.diag(model.log_trans)
    move_lp = np.diag(model.log_trans, k=1)
    for t in range(n - 2, -1, -1):
        stay = stay_lp + emit[t + 1] + beta[t + 1]
        move = np.full(K, -np.inf)
        move[:-1] = move_lp + emit[t + 1, 1:] + beta[t + 1, 1:]
        beta[t] = np.logaddexp(stay, move)
    return beta


def forward_backward(
    model: HmmModel, obs: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Returns (loglik, gamma, xi): gamma[t, k] = p(z_t = k | x), rows summing
    to 1; xi[t, i, j] = p(z_t = i, z_{t+1} = j | x) on the legal band."""
    emit = log_emissions(model, obs)
    alpha, loglik = forward(model, obs)
    beta = backward(model, obs)
    n, K = alpha.shape

    log_gamma = alpha + beta
    log_gamma -= np.logaddexp.reduce(log_gamma, axis=1, keepdims=True)
    gamma = np.exp(log_gamma)

    xi = np.zeros((max(n - 1, 0), K, K))
    if n > 1:
        with np.errstate(invalid="ignore"):
            log_xi = (
                alpha[:-1, :, None]
                + model.log_trans[None, :, :]
                + emit[1:, None, :]
                + beta[1:, None, :]
                - loglik
            )
        np.exp(log_xi, out=xi, where=np.isfinite(log_xi))
    return loglik, gamma, xi


def viterbi(model: HmmModel, obs: np.ndarray) -> tuple[np.ndarray, float]:
    """Most likely state path (1-based, non-decreasing) and its log score.

    Among equally scored paths the canonical one prefers the lower state at
    the final step, then the lower predecessor at each backtracking step.
    """
    emit = log_emissions(model, obs)
    n, K = emit.shape
    delta = np.full((n, K), -np.inf)
    psi = np.zeros((n, K), dtype=np.int64)
    delta[0] = model.log_init + emit[0]
    stay_lp = np.diag(model.log_trans)
    move_lp = np.diag(model.log_trans, k=1)
    for t in range(1, n):
        for k in range(K):
            stay = delta[t - 1, k] + stay_lp[k]
            move = delta[t - 1, k - 1] + move_lp[k - 1] if k > 0 else -np.inf
            # tie prefers the lower predecessor
            if move >= stay and k > 0:
                delta[t, k] = move + emit[t, k]
                psi[t, k] = k - 1
            else:
                delta[t, k] = stay + emit[t, k]
                psi[t, k] = k
    last = int(np.argmax(delta[-1]))  # argmax takes the lowest index on ties
    score = float(delta[-1, last])
    path = np.zeros(n, dtype=np.int64)
    path[-1] = last
    for t in range(n - 1, 0, -1):
        path[t - 1] = psi[t, path[t]]
    return path + 1, score


@dataclass(frozen=True)
class StageAssignment:
    path: tuple[int, ...]                  # 1-based states, non-decreasing
    blocks: tuple[tuple[int, int], ...]    # maximal runs of equal state


def path_to_blocks(path: np.ndarray) -> tuple[tuple[int, int], ...]:
    blocks: list[tuple[int, int]] = []
    start = 0
    for i in range(1, len(path) + 1):
        if i == len(path) or path[i] != path[start]:
            blocks.append((start + 1, i))
            start = i
    return tuple(blocks)


def stage_view(
    conv: Conversation, emb: EmbeddingMatrix, model: HmmModel
) -> StageAssignment:
    m = len(conv.utterances)
    if emb.matrix.shape[0] != m:
        raise ValueError(
            f"conversation {conv.id!r}: {emb.matrix.shape[0]} embedding rows "
            f"for {m} utterances"
        )
    path, _ = viterbi(model, emb.matrix)
    return StageAssignment(tuple(int(s) for s in path), path_to_blocks(path))


def init_hmm(observations: list[np.ndarray], n_states: int = 4) -> HmmModel:
    """Initialization for EM: each sequence is cut into n_states equal
    contiguous chunks, chunk k pooled across sequences for state k's moments.
    Transitions start at stay 0.5 / advance 0.5 (last state stays); initial
    mass is all on state 1."""
    if not observations:
        raise ValueError("need at least one observation sequence")
    if n_states < 1:
        raise ValueError("need at least one state")
    obs = [np.asarray(o, dtype=np.float64) for o in observations]
    d = obs[0].shape[1]
    pools: list[list[np.ndarray]] = [[] for _ in range(n_states)]
    for seq in obs:
        if seq.ndim != 2 or seq.shape[1] != d:
            raise ValueError("observation sequences disagree on dimension")
        for k, chunk in enumerate(np.array_split(seq, n_states)):
            if len(chunk):
                pools[k].append(chunk)
    everything = np.vstack(obs)
    means = np.zeros((n_states, d))
    vars_ = np.zeros((n_states, d))
    for k in range(n_states):
        pool = np.vstack(pools[k]) if pools[k] else everything
        means[k] = pool.mean(axis=0)
        vars_[k] = np.maximum(pool.var(axis=0), VAR_FLOOR)
    trans = np.zeros((n_states, n_states))
    for k in range(n_states - 1):
        trans[k, k] = 0.5
        trans[k, k + 1] = 0.5
    trans[-1, -1] = 1.0
    init = np.zeros(n_states)
    init[0] = 1.0
    with np.errstate(divide="ignore"):
        return HmmModel(means, vars_, np.log(trans), np.log(init))


def em_fit(
    init: HmmModel,
    observations: list[np.ndarray],
    max_iter: int = 50,
    tol: float = 1e-4,
) -> tuple[HmmModel, list[float]]:
    """Baum-Welch on the left-to-right band. Returns the fitted model and the
    per-iteration total log-likelihood history (non-decreasing up to
    floating-point noise). States that receive no posterior mass keep their
    current parameters. Stops when the improvement drops below tol."""
    if not observations:
        raise ValueError("need at least one observation sequence")
    K, d = init.n_states, init.dim
    model = HmmModel(
        init.means.copy(), init.vars.copy(), init.log_trans.copy(), init.log_init.copy()
    )
    history: list[float] = []
    prev = -np.inf
    for _ in range(max_iter):
        g_sum = np.zeros(K)
        gx = np.zeros((K, d))
        gxx = np.zeros((K, d))
        xi_sum = np.zeros((K, K))
        total = 0.0
        for seq in observations:
            loglik, gamma, xi = forward_backward(model, seq)
            total += loglik
            g_sum += gamma.sum(axis=0)
            gx += gamma.T @ seq
            gxx += gamma.T @ (seq * seq)
            if len(xi):
                xi_sum += xi.sum(axis=0)
        history.append(total)
        if total - prev < tol:
            break
        prev = total

        means = model.means.copy()
        vars_ = model.vars.copy()
        log_trans = model.log_trans.copy()
        for k in range(K):
            if g_sum[k] <= 1e-12:
                continue  # untouched state keeps its parameters
            means[k] = gx[k] / g_sum[k]
            second = gxx[k] / g_sum[k] - means[k] ** 2
            vars_[k] = np.maximum(second, VAR_FLOOR)
            if k < K - 1:
                row = xi_sum[k, k] + xi_sum[k, k + 1]
                if row > 1e-12:
                    with np.errstate(divide="ignore"):
                        log_trans[k, k] = np.log(xi_sum[k, k] / row)
                        log_trans[k, k + 1] = np.log(xi_sum[k, k + 1] / row)
        model = HmmModel(means, vars_, log_trans, model.log_init.copy())
    return model, history
