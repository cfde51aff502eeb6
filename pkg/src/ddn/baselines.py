"""Reference policies: uniform random, nearest-neighbour retrieval, and the
goal-conditioned recurrent policy obtained by dropping the forward model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import UsageError
from .model import DdnModel
from .numerics import make_rng


def random_plan(horizon: int, num_actions: int, seed: int | np.random.Generator) -> list[int]:
    if horizon < 1:
        raise UsageError("horizon must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    return [int(a) for a in rng.integers(num_actions, size=horizon)]


@dataclass
class RetrievalIndex:
    """``f(o_start) || f(o_goal)`` keys for every training sequence.

    With ``raw=True`` the keys are the observation features themselves.
    """

    keys: np.ndarray
    plans: list[list[int]]
    model: DdnModel | None = None
    raw: bool = False

    def __len__(self) -> int:
        return len(self.plans)

    def key(self, o_start: np.ndarray, o_goal: np.ndarray) -> np.ndarray:
        if self.raw:
            return np.concatenate([o_start, o_goal]).astype(np.float64)
        assert self.model is not None
        x = self.model.encode_state(np.stack([o_start, o_goal]))
        return x.reshape(-1).astype(np.float64)


def build_index(dataset: Dataset, model: DdnModel | None = None, raw: bool = False) -> RetrievalIndex:
    if len(dataset) == 0:
        raise UsageError("cannot index an empty dataset")
    if not raw and model is None:
        raise UsageError("a model is needed unless raw=True")
    starts = np.stack([s.start for s in dataset.sequences])
    goals = np.stack([s.goal for s in dataset.sequences])
    if raw:
        keys = np.concatenate([starts, goals], axis=1).astype(np.float64)
    else:
        keys = np.concatenate([model.encode_state(starts), model.encode_state(goals)], axis=1).astype(np.float64)
    plans = [[int(a) for a in s.actions] for s in dataset.sequences]
    return RetrievalIndex(keys, plans, model, raw)


def retrieval_plan(o_start: np.ndarray, o_goal: np.ndarray, index: RetrievalIndex, horizon: int | None = None) -> list[int]:
    """Actions of the stored pair nearest in key space (lowest index on ties).

    With a ``horizon`` only stored plans of that length are candidates.
    """
    if len(index) == 0:
        raise UsageError("empty retrieval index")
    q = index.key(o_start, o_goal)
    d = ((index.keys - q) ** 2).sum(axis=1)
    if horizon is not None:
        ok = np.array([len(p) == horizon for p in index.plans])
        if not ok.any():
            raise UsageError(f"no stored plan has {horizon} actions")
        d = np.where(ok, d, np.inf)
    return list(index.plans[int(np.argmin(d))])


def rnn_policy_plan(o_start: np.ndarray, o_goal: np.ndarray, model: DdnModel, horizon: int) -> list[int]:
    """Greedy autoregressive decode of the conjugate model with the state held at ``f(o_start)``."""
    x = model.encode_state(o_start)
    xg = model.encode_state(o_goal)
    hidden = np.zeros((2, model.config.hidden_dim), dtype=x.dtype)
    prev = model.start_token
    out = []
    for _ in range(horizon):
        abar, hidden = model.conjugate_step(x, model.embed_action(prev), xg, hidden)
        probs = model.action_probs(abar)
        prev = int(np.argmax(probs))
        out.append(prev)
    return out
