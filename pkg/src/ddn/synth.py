"""Synthetic instructional tasks over binary predicates.

World states are integer bitsets. Each action has positive preconditions, an
add list and a delete list; the delete list is always a non-empty subset of
the preconditions, so every applicable action changes the state. Observations
are a fixed random linear projection of the state bits plus Gaussian noise.

Generated schemas reserve the first few predicates for a one-hot phase token.
Every action consumes the current phase and produces the next one while moving
one object predicate to another, which keeps random demos mostly free of
alternative orderings.

Schema text format (``write_schema`` / ``read_schema``)::

    # comment lines are ignored
    num_predicates=8
    seed=0
    init=0,3,5          # one line per initial state: predicates that hold
    action pre=0,1 add=4 del=0

One ``action`` line per action, in id order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Dataset, SequenceExample
from .errors import FormatError, GenerationError, UsageError
from .numerics import make_rng


def _mask(preds) -> int:
    m = 0
    for p in preds:
        m |= 1 << int(p)
    return m


def _bits(mask: int) -> list[int]:
    out, i = [], 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return out


@dataclass(frozen=True)
class ActionSchema:
    pre: int
    add: int
    delete: int

    def applicable(self, state: int) -> bool:
        return self.pre & state == self.pre

    def apply(self, state: int) -> int:
        return (state & ~self.delete) | self.add


@dataclass
class TaskSchema:
    num_predicates: int
    actions: list[ActionSchema]
    initial_states: list[int]
    seed: int | None = None

    @property
    def num_actions(self) -> int:
        return len(self.actions)

    def applicable(self, state: int) -> list[int]:
        return [i for i, a in enumerate(self.actions) if a.applicable(state)]

    def step(self, state: int, action: int) -> int:
        a = self.actions[action]
        if not a.applicable(state):
            raise UsageError(f"action {action} not applicable in state {_bits(state)}")
        return a.apply(state)

    def replay(self, state: int, actions: Sequence[int]) -> list[int]:
        states = [state]
        for a in actions:
            state = self.step(state, int(a))
            states.append(state)
        return states

    def shortest_plans(self, start: int, goal: int, max_depth: int) -> tuple[int | None, int]:
        """BFS distance from ``start`` to ``goal`` and the number of shortest action sequences.

        Returns ``(None, 0)`` when the goal is farther than ``max_depth``.
        """
        dist, count = _shortest_counts(self, start, max_depth)
        if goal not in dist:
            return None, 0
        return dist[goal], count[goal]

    def has_unique_completion(self, states: Sequence[int]) -> bool:
        h = len(states) - 1
        d, c = self.shortest_plans(states[0], states[-1], h)
        return d == h and c == 1


def rollout_demo(
    schema: TaskSchema, rng: np.random.Generator | int, horizon: int, max_tries: int = 1000
) -> tuple[list[int], list[int]]:
    """Random walk of ``horizon`` applicable actions from a sampled initial state."""
    if horizon < 1:
        raise UsageError("horizon must be >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = make_rng(rng)
    for _ in range(max_tries):
        state = schema.initial_states[rng.integers(len(schema.initial_states))]
        states, actions = [state], []
        for _ in range(horizon):
            options = schema.applicable(state)
            if not options:
                break
            a = options[rng.integers(len(options))]
            state = schema.actions[a].apply(state)
            states.append(state)
            actions.append(a)
        if len(actions) == horizon:
            return states, actions
    raise GenerationError(f"no {horizon}-step demo after {max_tries} attempts")


def unique_fraction(
    schema: TaskSchema, rng: np.random.Generator, horizon: int, rollouts: int = 200
) -> float:
    hits = 0
    for _ in range(rollouts):
        states, _ = rollout_demo(schema, rng, horizon)
        hits += schema.has_unique_completion(states)
    return hits / rollouts


def _shortest_counts(schema: TaskSchema, start: int, depth: int) -> tuple[dict[int, int], dict[int, int]]:
    dist, count, frontier = {start: 0}, {start: 1}, [start]
    for d in range(1, depth + 1):
        nxt: dict[int, int] = {}
        for s in frontier:
            for a in schema.actions:
                if a.applicable(s):
                    t = a.apply(s)
                    if t not in dist:
                        nxt[t] = nxt.get(t, 0) + count[s]
        for t, c in nxt.items():
            dist[t], count[t] = d, c
        frontier = list(nxt)
    return dist, count


def walk_statistics(schema: TaskSchema, start: int, horizon: int) -> tuple[bool, float]:
    """Exact ``(live, p_unique)`` for a uniform random walk of ``horizon`` steps.

    ``live`` is False if some walk hits a state with no applicable action.
    ``p_unique`` is the probability that the walk is the only shortest plan
    between its endpoints.
    """
    dist, count = _shortest_counts(schema, start, horizon)
    walks = {start: 1.0}
    for _ in range(horizon):
        nxt: dict[int, float] = {}
        for s, p in walks.items():
            opts = [a for a in schema.actions if a.applicable(s)]
            if not opts:
                return False, 0.0
            for a in opts:
                t = a.apply(s)
                nxt[t] = nxt.get(t, 0.0) + p / len(opts)
        walks = nxt
    # every walk reaching a uniquely-reached endpoint at the right depth is that unique plan
    p = sum(q for t, q in walks.items() if dist.get(t) == horizon and count[t] == 1)
    return True, p


def _draw_actions(rng: np.random.Generator, num_predicates: int, num_actions: int, num_stages: int) -> list[ActionSchema]:
    # predicates [0, num_stages) form a one-hot phase token that every action
    # advances, so actions never commute; the rest are objects moved src -> dst
    objects = np.arange(num_stages, num_predicates)
    groups = [list(range(i, num_actions, num_stages)) for i in range(num_stages)]
    actions: list[ActionSchema | None] = [None] * num_actions
    for stage, ids in enumerate(groups):
        nxt = (stage + 1) % num_stages
        pairs = [(int(a), int(b)) for a in objects for b in objects if a != b]
        # prefer distinct sources and targets within a phase
        for _ in range(100):
            pick = [pairs[i] for i in rng.choice(len(pairs), size=len(ids), replace=False)]
            if len({p[0] for p in pick}) == len(pick) and len({p[1] for p in pick}) == len(pick):
                break
        for i, (src, dst) in zip(ids, pick):
            pre = _mask([stage, src])
            actions[i] = ActionSchema(pre, _mask([nxt, dst]), pre)
    return actions  # type: ignore[return-value]


def _pick_initial_states(
    schema: TaskSchema, num_stages: int, horizons: Sequence[int], max_horizon: int, target: float
) -> list[int]:
    """Largest set of phase-valid states, best first, whose mean unique-plan rate stays >= target."""
    scored = []
    for state in range(2**schema.num_predicates):
        if bin(state & ((1 << num_stages) - 1)).count("1") != 1:
            continue
        live, _ = walk_statistics(schema, state, max_horizon)
        if not live:
            continue
        score = min(walk_statistics(schema, state, h)[1] for h in horizons)
        scored.append((-score, state))
    scored.sort()
    chosen, total = [], 0.0
    for neg, state in scored:
        if (total - neg) / (len(chosen) + 1) < target:
            break
        chosen.append(state)
        total -= neg
    return sorted(chosen)


def sample_task(
    seed: int,
    num_predicates: int = 8,
    num_actions: int = 12,
    horizons: Sequence[int] = (3,),
    *,
    max_horizon: int | None = None,
    num_stages: int = 3,
    rollouts: int = 200,
    threshold: float = 0.9,
    min_initial: int = 32,
    max_tries: int = 1000,
) -> TaskSchema:
    """Rejection-sample a schema whose random demos mostly have a unique shortest plan.

    Actions are drawn first; the initial-state distribution is then the
    largest set of states from which random walks of every requested horizon
    are unique plans often enough on average, restricted to states whose
    walks never dead-end before ``max_horizon``. A draw is accepted when, for
    every requested horizon, at least ``threshold`` of ``rollouts`` sampled
    demos are the only shortest action sequence between their endpoints.
    """
    if num_actions < 2 or num_predicates < 2:
        raise UsageError("need at least 2 actions and 2 predicates")
    if not horizons or min(horizons) < 1:
        raise UsageError("horizons must be >= 1")
    num_stages = max(2, min(num_stages, num_predicates - 2))
    objects = num_predicates - num_stages
    if -(-num_actions // num_stages) > objects * (objects - 1):
        raise UsageError(f"{num_actions} actions do not fit in {num_predicates} predicates")
    top = max(max(horizons), max_horizon or 0)
    rng = make_rng(seed)
    for _ in range(max_tries):
        schema = TaskSchema(num_predicates, _draw_actions(rng, num_predicates, num_actions, num_stages), [], seed)
        # small margin so the sampled check below rarely rejects an exact pass
        schema.initial_states = _pick_initial_states(schema, num_stages, horizons, top, min(1.0, threshold + 0.02))
        if len(schema.initial_states) < min_initial:
            continue
        check = make_rng(rng.integers(2**63))
        if all(unique_fraction(schema, check, h, rollouts) >= threshold for h in horizons):
            return schema
    raise GenerationError(f"no acceptable schema after {max_tries} draws (seed {seed})")


@dataclass
class ObservationRenderer:
    """``render(s) = W @ bits(s) + sigma * noise`` with a fixed ``W``."""

    weights: np.ndarray  # (D, num_predicates)
    sigma: float = 0.05
    seed: int | None = None

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[0]

    def clean(self, state: int) -> np.ndarray:
        bits = np.array([(state >> i) & 1 for i in range(self.weights.shape[1])], dtype=np.float64)
        return self.weights @ bits

    def render(self, state: int, rng: np.random.Generator | None = None) -> np.ndarray:
        obs = self.clean(state)
        if self.sigma > 0:
            if rng is None:
                raise UsageError("a noise generator is required when sigma > 0")
            obs = obs + self.sigma * rng.standard_normal(obs.shape)
        return obs.astype(np.float32)


def make_renderer(seed: int, num_predicates: int, feature_dim: int = 64, sigma: float = 0.05) -> ObservationRenderer:
    if feature_dim < num_predicates:
        raise UsageError("feature_dim must be >= num_predicates for distinct renders")
    rng = make_rng(seed)
    for _ in range(100):
        w = rng.standard_normal((feature_dim, num_predicates))
        if np.linalg.matrix_rank(w) == num_predicates:
            return ObservationRenderer(w, sigma, seed)
    raise GenerationError("could not draw a full-rank projection")


@dataclass
class DatasetSplit:
    train: Dataset
    test: Dataset
    meta: dict = field(default_factory=dict)


def make_dataset(
    schema: TaskSchema,
    renderer: ObservationRenderer,
    n: int,
    horizon: int | Sequence[int],
    seed: int,
    *,
    unique_only: bool = True,
    train_fraction: float = 0.7,
) -> tuple[Dataset, Dataset]:
    """Sample ``n`` demos per horizon, render them and split 70/30 by sequence.

    With ``unique_only`` every kept demo is the single shortest plan between
    its endpoints, so exact-match success is well defined.
    """
    if n < 10:
        raise UsageError(f"N too small: {n} < 10")
    horizons = [horizon] if isinstance(horizon, int) else list(horizon)
    rng = make_rng(seed)
    demo_rng, noise_rng, split_rng = rng.spawn(3)
    train, test = [], []
    for h in horizons:
        seqs = []
        tries = 0
        while len(seqs) < n:
            tries += 1
            if tries > 1000 * n:
                raise GenerationError(f"too few unique {h}-step demos")
            states, actions = rollout_demo(schema, demo_rng, h)
            if unique_only and not schema.has_unique_completion(states):
                continue
            obs = np.stack([renderer.render(s, noise_rng) for s in states])
            seqs.append(SequenceExample(obs, np.asarray(actions, dtype=np.int64), tuple(states)))
        order = split_rng.permutation(n)
        cut = int(round(train_fraction * n))
        train += [seqs[i] for i in order[:cut]]
        test += [seqs[i] for i in order[cut:]]
    D, A = renderer.feature_dim, schema.num_actions
    return Dataset(D, A, train, "train"), Dataset(D, A, test, "test")


def schema_to_text(schema: TaskSchema) -> str:
    lines = [f"num_predicates={schema.num_predicates}"]
    if schema.seed is not None:
        lines.append(f"seed={schema.seed}")
    for s in schema.initial_states:
        lines.append("init=" + ",".join(map(str, _bits(s))))
    for a in schema.actions:
        lines.append(
            "action pre={} add={} del={}".format(
                ",".join(map(str, _bits(a.pre))),
                ",".join(map(str, _bits(a.add))),
                ",".join(map(str, _bits(a.delete))),
            )
        )
    return "\n".join(lines) + "\n"


def _parse_ids(text: str, offset: int) -> list[int]:
    if not text:
        return []
    try:
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise FormatError(f"bad predicate list {text!r}", offset) from None


def schema_from_text(text: str) -> TaskSchema:
    num_predicates = None
    seed = None
    init: list[int] = []
    actions: list[ActionSchema] = []
    offset = 0
    for raw in text.splitlines(keepends=True):
        line = raw.split("#", 1)[0].strip()
        here = offset
        offset += len(raw.encode())
        if not line:
            continue
        if line.startswith("action"):
            fields = dict(part.split("=", 1) for part in line.split()[1:] if "=" in part)
            if set(fields) != {"pre", "add", "del"}:
                raise FormatError(f"action line needs pre/add/del: {line!r}", here)
            pre, add, dele = (_mask(_parse_ids(fields[k], here)) for k in ("pre", "add", "del"))
            if add & dele:
                raise FormatError("add and delete lists overlap", here)
            actions.append(ActionSchema(pre, add, dele))
            continue
        if "=" not in line:
            raise FormatError(f"expected key=value: {line!r}", here)
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "num_predicates":
            num_predicates = int(value)
        elif key == "seed":
            seed = int(value)
        elif key == "init":
            init.append(_mask(_parse_ids(value, here)))
        else:
            raise FormatError(f"unknown schema key {key!r}", here)
    if num_predicates is None or not actions or not init:
        raise FormatError("schema needs num_predicates, init and action lines", offset)
    return TaskSchema(num_predicates, actions, init, seed)


def write_schema(schema: TaskSchema, path: str | Path) -> None:
    Path(path).write_text(schema_to_text(schema), encoding="utf-8")


def read_schema(path: str | Path) -> TaskSchema:
    return schema_from_text(Path(path).read_text(encoding="utf-8"))
