"""Best-first beam search in latent space.

The search keeps at most ``beam_size`` open nodes ordered by squared distance
to the goal embedding (ties by creation order). Each pop expands the node with
the conjugate model's top-``k`` actions and advances the state with the
forward model. Depth is capped at the planning horizon and the answer is the
closest depth-``H`` node seen, traced back to the root.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import PlannerError, UsageError
from .model import DdnModel
from .numerics import make_rng

# (x, previous action id, goal, hidden, k) -> ([(action, prob), ...], child hidden)
ProposeFn = Callable[[np.ndarray, int, np.ndarray, np.ndarray, int], tuple[list[tuple[int, float]], np.ndarray]]
# (x, action ids) -> next states, one row per action
AdvanceFn = Callable[[np.ndarray, list[int]], np.ndarray]


@dataclass
class PlannerConfig:
    horizon: int = 3
    max_iterations: int | None = None  # defaults to 20 * horizon
    beam_size: int = 20
    epsilon: float = 1e-5
    branching: int | None = None  # defaults to min(A, 20)
    uniform_proposals: bool = False  # planner ablation without the conjugate model
    temperature: float | None = None  # sample proposals instead of top-k
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise UsageError("horizon must be >= 1")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise UsageError("max_iterations must be >= 1")
        if self.beam_size < 1:
            raise UsageError("beam_size must be >= 1")
        if self.epsilon < 0:
            raise UsageError("epsilon must be >= 0")
        if self.branching is not None and self.branching < 1:
            raise UsageError("branching must be >= 1")

    @property
    def budget(self) -> int:
        return self.max_iterations if self.max_iterations is not None else 20 * self.horizon

    def branching_for(self, num_actions: int) -> int:
        k = self.branching if self.branching is not None else min(num_actions, 20)
        return min(k, num_actions)


@dataclass(eq=False)
class BeamNode:
    x: np.ndarray
    action: int
    depth: int
    parent: "BeamNode | None"
    hidden: np.ndarray
    priority: float
    insertion_id: int

    @property
    def key(self) -> tuple[float, int]:
        return (self.priority, self.insertion_id)


@dataclass
class PlanResult:
    actions: list[int]
    states: list[np.ndarray]
    distance: float
    iterations: int
    nodes: int = 0
    extra: dict = field(default_factory=dict)


def sqdist(a: np.ndarray, b: np.ndarray) -> float:
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(d @ d)


def backtrack(node: BeamNode, horizon: int | None = None) -> list[int]:
    """Action ids along the parent chain, root first."""
    if horizon is not None and node.depth != horizon:
        raise PlannerError(f"backtrack from depth {node.depth}, expected {horizon}")
    out = []
    while node.parent is not None:
        out.append(node.action)
        node = node.parent
    return out[::-1]


def _path_states(node: BeamNode) -> list[np.ndarray]:
    out = []
    while node is not None:
        out.append(node.x)
        node = node.parent
    return out[::-1]


def beam_search(
    x0: np.ndarray,
    x_goal: np.ndarray,
    propose: ProposeFn,
    advance: AdvanceFn,
    config: PlannerConfig,
    num_actions: int,
    start_action: int,
    hidden0: np.ndarray,
) -> PlanResult:
    H = config.horizon
    k = config.branching_for(num_actions)
    counter = itertools.count()
    root = BeamNode(x0, start_action, 0, None, hidden0, sqdist(x0, x_goal), next(counter))
    queue = [root]
    best: BeamNode | None = None
    iterations = 0
    while queue and iterations < config.budget:
        if best is not None and best.priority <= config.epsilon:
            break
        node = queue.pop(0)
        iterations += 1
        proposals, child_hidden = propose(node.x, node.action, x_goal, node.hidden, k)
        ids = [a for a, _ in proposals]
        nxt = advance(node.x, ids)
        for a, x in zip(ids, nxt):
            child = BeamNode(x, a, node.depth + 1, node, child_hidden, sqdist(x, x_goal), next(counter))
            if child.depth < H:
                queue.append(child)
            elif best is None or child.priority < best.priority:
                best = child
        queue.sort(key=lambda n: n.key)
        del queue[config.beam_size :]
    if best is None:
        raise PlannerError(f"budget too small: no depth-{H} node after {iterations} iterations")
    return PlanResult(backtrack(best, H), _path_states(best), best.priority, iterations, next(counter))


def propose_actions(
    model: DdnModel,
    x: np.ndarray,
    prev_action: int,
    x_goal: np.ndarray,
    hidden: np.ndarray | None,
    k: int,
    *,
    temperature: float | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[list[tuple[int, float]], np.ndarray]:
    """Top-``k`` actions under the conjugate model, most probable first.

    Ties go to the smaller action id. With a ``temperature`` the ``k`` actions
    are instead sampled without replacement (Gumbel top-k) and still listed
    by probability.
    """
    A = model.config.num_actions
    k = max(1, min(int(k), A))
    abar, new_hidden = model.conjugate_step(x, model.embed_action(prev_action), x_goal, hidden)
    probs = model.action_probs(abar)
    ids = np.arange(A)
    if temperature is None:
        order = np.lexsort((ids, -probs))[:k]
    else:
        if rng is None:
            raise UsageError("stochastic proposals need a generator")
        keys = np.log(np.maximum(probs, 1e-300)) / temperature + rng.gumbel(size=A)
        chosen = np.lexsort((ids, -keys))[:k]
        order = chosen[np.lexsort((chosen, -probs[chosen]))]
    return [(int(a), float(probs[a])) for a in order], new_hidden


def plan(o_start: np.ndarray, o_goal: np.ndarray, model: DdnModel, config: PlannerConfig) -> PlanResult:
    """Plan ``config.horizon`` actions from ``o_start`` towards ``o_goal``."""
    A = model.config.num_actions
    x0 = model.encode_state(o_start)
    xg = model.encode_state(o_goal)
    table = model.embed_action(np.arange(A))
    rng = make_rng(config.seed) if config.temperature is not None else None

    if config.uniform_proposals:
        uniform = [(a, 1.0 / A) for a in range(A)]

        def propose(x, prev, goal, hidden, k):
            return uniform[:k], hidden

        cfg = config if config.branching is not None else replace(config, branching=A)
    else:

        def propose(x, prev, goal, hidden, k):
            return propose_actions(model, x, prev, goal, hidden, k, temperature=config.temperature, rng=rng)

        cfg = config

    def advance(x, ids):
        return model.forward_step(np.repeat(x[None, :], len(ids), axis=0), table[ids])

    hidden0 = np.zeros((2, model.config.hidden_dim), dtype=x0.dtype)
    return beam_search(x0, xg, propose, advance, cfg, A, model.start_token, hidden0)


def greedy_rollout(o_start: np.ndarray, o_goal: np.ndarray, model: DdnModel, horizon: int) -> PlanResult:
    """Argmax action of the conjugate model at each step, state advanced by the forward model."""
    x = model.encode_state(o_start)
    xg = model.encode_state(o_goal)
    hidden = np.zeros((2, model.config.hidden_dim), dtype=x.dtype)
    prev = model.start_token
    actions, states = [], [x]
    for _ in range(horizon):
        proposals, hidden = propose_actions(model, x, prev, xg, hidden, 1)
        a = proposals[0][0]
        x = model.forward_step(x, model.embed_action(a))
        actions.append(a)
        states.append(x)
        prev = a
    return PlanResult(actions, states, sqdist(x, xg), horizon)
