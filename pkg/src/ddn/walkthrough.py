"""Ordering a pool of clips between a fixed start and goal.

``score_matrix`` rates every ordered pair (i, j) by how plausibly one action
takes clip i to clip j. ``best_permutation`` then finds the visiting order of
the middle clips that maximizes the summed pair scores. Orders are 0-based
index lists with ``order[0] == 0`` and ``order[-1] == L - 1``.
"""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np

from .errors import CapacityError, UsageError
from .model import DdnModel

EXHAUSTIVE_MAX = 8
HELD_KARP_MAX = 16


def _logsumexp(z: np.ndarray, axis: int) -> np.ndarray:
    m = z.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def score_matrix(clips: Sequence[np.ndarray] | np.ndarray, model: DdnModel) -> np.ndarray:
    """``R[i, j] = log sum_a exp(-0.5 * |T(x_i, g(a)) - x_j|^2) * p(a | x_i)``.

    ``p(. | x_i)`` is the conjugate model's first-step distribution towards the
    last clip, i.e. with the start token and a zero recurrent state. The
    diagonal is ``-inf``.
    """
    obs = np.asarray(clips)
    if obs.ndim != 2 or obs.shape[0] < 2:
        raise UsageError("a walkthrough needs at least 2 clips")
    L, A = obs.shape[0], model.config.num_actions
    x = model.encode_state(obs)
    goal = np.repeat(x[-1:], L, axis=0)
    start = np.repeat(model.embed_action(model.start_token)[None, :], L, axis=0)
    abar, _ = model.conjugate_step(x, start, goal)
    logp = model.action_log_probs(abar)  # (L, A)

    table = model.embed_action(np.arange(A))
    nxt = model.forward_step(np.repeat(x, A, axis=0), np.tile(table, (L, 1)))
    nxt = nxt.astype(np.float64).reshape(L, A, -1)
    x64 = x.astype(np.float64)
    # (i, a, j) squared distances
    d2 = ((nxt[:, :, None, :] - x64[None, None, :, :]) ** 2).sum(-1)
    R = _logsumexp(-0.5 * d2 + logp[:, :, None], axis=1)
    np.fill_diagonal(R, -np.inf)
    return R


def path_score(R: np.ndarray, order: Sequence[int]) -> float:
    """Sum of ``R`` along consecutive pairs, accumulated left to right."""
    total = 0.0
    for a, b in zip(order, order[1:]):
        total += float(R[a, b])
    return total


def _check(R: np.ndarray) -> int:
    R = np.asarray(R)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise UsageError(f"score matrix must be square, got shape {R.shape}")
    if R.shape[0] < 2:
        raise UsageError("a walkthrough needs at least 2 clips")
    return R.shape[0]


def exhaustive_order(R: np.ndarray) -> tuple[list[int], float]:
    """Best order by enumerating all middle permutations in lexicographic order."""
    L = _check(R)
    best, best_score = None, -np.inf
    for mid in itertools.permutations(range(1, L - 1)):
        order = (0, *mid, L - 1)
        s = path_score(R, order)
        if best is None or s > best_score:
            best, best_score = order, s
    return list(best), best_score


def held_karp_order(R: np.ndarray) -> tuple[list[int], float]:
    """Best order by dynamic programming over subsets of middle clips.

    Each (subset, last clip) cell keeps its best prefix; equal scores keep the
    lexicographically smaller prefix, which matches ``exhaustive_order``.
    """
    L = _check(R)
    if L <= 3:
        order = list(range(L))
        return order, path_score(R, order)
    m = L - 2  # middle clips 1..L-2 map to bits 0..m-1
    # cell: (score, path tuple)
    layer: dict[tuple[int, int], tuple[float, tuple[int, ...]]] = {}
    for j in range(m):
        layer[(1 << j, j)] = (0.0 + float(R[0, j + 1]), (0, j + 1))
    for _ in range(m - 1):
        nxt: dict[tuple[int, int], tuple[float, tuple[int, ...]]] = {}
        for (subset, last), (score, path) in layer.items():
            for j in range(m):
                if subset >> j & 1:
                    continue
                cand = (score + float(R[last + 1, j + 1]), path + (j + 1,))
                key = (subset | 1 << j, j)
                cur = nxt.get(key)
                if cur is None or cand[0] > cur[0] or (cand[0] == cur[0] and cand[1] < cur[1]):
                    nxt[key] = cand
        layer = nxt
    best = None
    for (_, last), (score, path) in sorted(layer.items(), key=lambda kv: kv[1][1]):
        cand = (score + float(R[last + 1, L - 1]), path + (L - 1,))
        if best is None or cand[0] > best[0]:
            best = cand
    return list(best[1]), best[0]


def best_permutation(R: np.ndarray, method: str = "auto") -> list[int]:
    """Highest-scoring order with fixed endpoints.

    ``method="auto"`` enumerates for ``L <= 8`` and uses Held-Karp up to 16.
    """
    L = _check(R)
    if method not in ("auto", "exhaustive", "held-karp"):
        raise UsageError(f"unknown method {method!r}")
    if L > HELD_KARP_MAX:
        raise CapacityError(f"{L} clips exceeds the limit of {HELD_KARP_MAX}")
    if method == "exhaustive" or (method == "auto" and L <= EXHAUSTIVE_MAX):
        return exhaustive_order(R)[0]
    return held_karp_order(R)[0]


def walkthrough_plan(clips: Sequence[np.ndarray] | np.ndarray, model: DdnModel, method: str = "auto") -> list[int]:
    return best_permutation(score_matrix(clips, model), method)
