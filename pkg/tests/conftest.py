from __future__ import annotations

import numpy as np
import pytest

from ddn.dataset import Dataset, SequenceExample
from ddn.model import DdnModel, ModelConfig

ACCEPTANCE_LINES: list[str] = []


def small_config(**kw) -> ModelConfig:
    base = dict(feature_dim=6, latent_dim=5, num_actions=4, hidden_dim=7, alpha=0.5, horizon=2)
    base.update(kw)
    return ModelConfig(**base)


def small_model(seed: int = 0, dtype=np.float32, **kw) -> DdnModel:
    return DdnModel(small_config(**kw), seed=seed).astype(dtype)


def random_batch(rng: np.random.Generator, n: int, horizon: int, D: int, A: int):
    obs = rng.standard_normal((n, horizon + 1, D))
    acts = rng.integers(A, size=(n, horizon))
    return obs, acts


def chain_model(step=(1.0, 0.5), num_actions: int = 1) -> DdnModel:
    """Model with identity ``f`` and ``T(x, a) = x + step`` built from relu pairs.

    relu(v) - relu(-v) == v, so both MLPs are exact. With one action the
    conjugate model's distribution is a point mass.
    """
    L = len(step)
    cfg = ModelConfig(feature_dim=L, latent_dim=L, num_actions=num_actions, hidden_dim=2 * L)
    m = DdnModel(cfg, seed=0).astype(np.float64)
    split = np.concatenate([np.eye(L), -np.eye(L)], axis=1)  # (L, 2L)
    merge = split.T.copy()  # (2L, L)
    m["f.w1"].data = split.copy()
    m["f.b1"].data = np.zeros(2 * L)
    m["f.w2"].data = merge.copy()
    m["f.b2"].data = np.zeros(L)
    m["T.w1"].data = np.concatenate([split, np.zeros((L, 2 * L))], axis=0)
    m["T.b1"].data = np.zeros(2 * L)
    m["T.w2"].data = merge.copy()
    m["T.b2"].data = np.asarray(step, dtype=np.float64)
    return m


def toy_dataset(num: int, horizon: int = 2, D: int = 6, A: int = 4, seed: int = 0) -> Dataset:
    rng = np.random.default_rng(seed)
    seqs = [
        SequenceExample(
            rng.standard_normal((horizon + 1, D)).astype(np.float32),
            rng.integers(A, size=horizon).astype(np.int64),
        )
        for _ in range(num)
    ]
    return Dataset(D, A, seqs)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
