"""Dual dynamics network: encoders, decoder, forward and conjugate dynamics.

Components, all at ``latent_dim`` / ``hidden_dim`` width:

* ``f``  observation encoder, 2-layer MLP ``D -> hidden -> latent`` (relu hidden).
* ``g``  action embedding table with ``A + 1`` rows; row ``A`` is the start token.
* ``h``  action decoder, affine ``latent -> A`` followed by softmax.
* ``T``  forward dynamics, 2-layer MLP on ``x || a`` predicting the next state.
* ``P``  conjugate dynamics, 2-layer tanh RNN over ``x_t || a_{t-1} || x_goal``
  with an affine read-out to the latent action space.

The forward model is deterministic; its log-likelihood under a unit-variance
Gaussian is the squared error, so both dynamics losses are squared distances
in latent space, plus softmax cross-entropy through ``h`` for actions.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .errors import DimensionError, RangeError, UsageError
from .numerics import Tensor

ROLLOUTS = ("cross", "teacher")
FORWARD_INPUTS = ("embedded", "predicted")
ABLATIONS = ("full", "no-P", "no-T")


@dataclass
class ModelConfig:
    feature_dim: int = 3200
    latent_dim: int = 128
    num_actions: int = 105
    hidden_dim: int = 128
    alpha: float = 0.001
    horizon: int = 3
    # "cross": predicted states feed the next step; "teacher": ground truth does
    rollout: str = "cross"
    # action fed to T during training: the embedding g(a_t) or P's prediction
    forward_input: str = "embedded"

    def __post_init__(self):
        for name in ("feature_dim", "latent_dim", "num_actions", "hidden_dim", "horizon"):
            if int(getattr(self, name)) <= 0:
                raise UsageError(f"{name} must be positive")
        if not self.alpha > 0:
            raise UsageError("alpha must be > 0")
        if self.rollout not in ROLLOUTS:
            raise UsageError(f"rollout must be one of {ROLLOUTS}")
        if self.forward_input not in FORWARD_INPUTS:
            raise UsageError(f"forward_input must be one of {FORWARD_INPUTS}")


class DdnModel:
    """Parameters plus the five component maps, on batched ``Tensor`` inputs."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        c = config
        D, L, H, A = c.feature_dim, c.latent_dim, c.hidden_dim, c.num_actions
        shapes = [
            ("f.w1", (D, H), D),
            ("f.b1", (H,), D),
            ("f.w2", (H, L), H),
            ("f.b2", (L,), H),
            # one-hot input: a single active unit
            ("g.table", (A + 1, L), 1),
            ("h.w", (L, A), L),
            ("h.b", (A,), L),
            ("T.w1", (2 * L, H), 2 * L),
            ("T.b1", (H,), 2 * L),
            ("T.w2", (H, L), H),
            ("T.b2", (L,), H),
            ("P.wx1", (3 * L, H), 3 * L + H),
            ("P.wh1", (H, H), 3 * L + H),
            ("P.b1", (H,), 3 * L + H),
            ("P.wx2", (H, H), 2 * H),
            ("P.wh2", (H, H), 2 * H),
            ("P.b2", (H,), 2 * H),
            ("P.wo", (H, L), H),
            ("P.bo", (L,), H),
        ]
        rng = nx.make_rng(seed)
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        for name, shape, fan_in in shapes:
            self.params[name] = Tensor(nx.uniform_init(rng, shape, fan_in), requires_grad=True, name=name)

    # -- bookkeeping -----------------------------------------------------------

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def parameters(self, prefix: str | Sequence[str] | None = None) -> list[Tensor]:
        if prefix is None:
            return list(self.params.values())
        prefixes = (prefix,) if isinstance(prefix, str) else tuple(prefix)
        return [p for n, p in self.params.items() if n.split(".")[0] in prefixes]

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def astype(self, dtype) -> "DdnModel":
        for p in self.params.values():
            p.astype(dtype)
        return self

    def copy(self) -> "DdnModel":
        other = DdnModel.__new__(DdnModel)
        other.config = self.config
        other.params = OrderedDict()
        for name, p in self.params.items():
            t = Tensor(p.data, requires_grad=True, name=name)
            t.data = p.data.copy()
            other.params[name] = t
        return other

    @property
    def start_token(self) -> int:
        return self.config.num_actions

    # -- components on batched tensors -------------------------------------------

    def f(self, obs: Tensor) -> Tensor:
        p = self.params
        hid = nx.relu(nx.affine(obs, p["f.w1"], p["f.b1"]))
        return nx.affine(hid, p["f.w2"], p["f.b2"])

    def g(self, ids) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        if ids.size and (ids.min() < 0 or ids.max() > self.config.num_actions):
            raise RangeError(f"action id outside [0, {self.config.num_actions}]")
        return nx.gather_rows(self.params["g.table"], ids)

    def h(self, abar: Tensor) -> Tensor:
        """Action logits."""
        return nx.affine(abar, self.params["h.w"], self.params["h.b"])

    def T(self, x: Tensor, abar: Tensor) -> Tensor:
        p = self.params
        hid = nx.relu(nx.affine(nx.concat([x, abar]), p["T.w1"], p["T.b1"]))
        return nx.affine(hid, p["T.w2"], p["T.b2"])

    def P(self, x: Tensor, abar_prev: Tensor, x_goal: Tensor, hidden: tuple[Tensor, Tensor]):
        """One recurrent step; returns ``(predicted latent action, new hidden)``."""
        p = self.params
        h1, h2 = hidden
        inp = nx.concat([x, abar_prev, x_goal])
        n1 = nx.tanh(nx.add(nx.affine(inp, p["P.wx1"], p["P.b1"]), nx.matmul(h1, p["P.wh1"])))
        n2 = nx.tanh(nx.add(nx.affine(n1, p["P.wx2"], p["P.b2"]), nx.matmul(h2, p["P.wh2"])))
        return nx.affine(n2, p["P.wo"], p["P.bo"]), (n1, n2)

    def zero_hidden(self, n: int) -> tuple[Tensor, Tensor]:
        dt = self.params["P.wh1"].data.dtype
        z = np.zeros((n, self.config.hidden_dim), dtype=dt)
        return Tensor(z), Tensor(z.copy())

    # -- single-example inference (numpy in, numpy out) ----------------------------

    def _rows(self, v, dim: int, what: str) -> tuple[np.ndarray, bool]:
        a = np.asarray(v, dtype=self.params["f.w1"].data.dtype)
        single = a.ndim == 1
        a = a.reshape(1, -1) if single else a
        if a.ndim != 2 or a.shape[1] != dim:
            raise DimensionError(f"{what}: expected length {dim}, got shape {np.shape(v)}")
        return a, single

    def encode_state(self, obs) -> np.ndarray:
        a, single = self._rows(obs, self.config.feature_dim, "encode_state")
        with nx.no_grad():
            out = self.f(Tensor(a)).data
        return out[0] if single else out

    def embed_action(self, action) -> np.ndarray:
        ids = np.atleast_1d(np.asarray(action, dtype=np.int64))
        with nx.no_grad():
            out = self.g(ids).data
        return out[0] if np.ndim(action) == 0 else out

    def action_probs(self, abar) -> np.ndarray:
        a, single = self._rows(abar, self.config.latent_dim, "decode_action")
        with nx.no_grad():
            probs = nx.softmax_np(self.h(Tensor(a)).data.astype(np.float64))
        return probs[0] if single else probs

    decode_action = action_probs

    def action_log_probs(self, abar) -> np.ndarray:
        a, single = self._rows(abar, self.config.latent_dim, "decode_action")
        with nx.no_grad():
            out = nx.log_softmax_np(self.h(Tensor(a)).data.astype(np.float64))
        return out[0] if single else out

    def forward_step(self, x, abar) -> np.ndarray:
        L = self.config.latent_dim
        xa, single = self._rows(x, L, "forward_step")
        aa, _ = self._rows(abar, L, "forward_step")
        if xa.shape != aa.shape:
            raise DimensionError("forward_step: state and action batches differ")
        with nx.no_grad():
            out = self.T(Tensor(xa), Tensor(aa)).data
        return out[0] if single else out

    def conjugate_step(self, x, abar_prev, x_goal, hidden=None):
        """Returns ``(predicted latent action, hidden)``; ``hidden`` is a ``(2, n, H)`` array."""
        L, Hd = self.config.latent_dim, self.config.hidden_dim
        xa, single = self._rows(x, L, "conjugate_step")
        pa, _ = self._rows(abar_prev, L, "conjugate_step")
        ga, _ = self._rows(x_goal, L, "conjugate_step")
        n = xa.shape[0]
        if pa.shape[0] != n or ga.shape[0] != n:
            raise DimensionError("conjugate_step: batch sizes differ")
        hid = np.zeros((2, n, Hd), dtype=xa.dtype) if hidden is None else np.asarray(hidden, dtype=xa.dtype)
        if single and hid.shape == (2, Hd):
            hid = hid[:, None, :]
        if hid.shape != (2, n, Hd):
            raise DimensionError(f"conjugate_step: hidden must have shape (2, {n}, {Hd})")
        with nx.no_grad():
            out, (h1, h2) = self.P(Tensor(xa), Tensor(pa), Tensor(ga), (Tensor(hid[0]), Tensor(hid[1])))
        new_hidden = np.stack([h1.data, h2.data])
        if single:
            return out.data[0], new_hidden[:, 0]
        return out.data, new_hidden


# -- losses ------------------------------------------------------------------------


def _check_batch(model: DdnModel, obs: np.ndarray, actions: np.ndarray) -> None:
    if obs.ndim != 3 or actions.ndim != 2:
        raise DimensionError("expected (n, L, D) observations and (n, L-1) actions")
    if len(obs) == 0:
        raise UsageError("empty batch")
    if obs.shape[0] != actions.shape[0] or obs.shape[1] != actions.shape[1] + 1:
        raise UsageError(
            f"length mismatch: observations {obs.shape[:2]} vs actions {actions.shape}"
        )
    if actions.shape[1] < 1:
        raise UsageError("sequences need at least one action")
    if obs.shape[2] != model.config.feature_dim:
        raise DimensionError(f"observation dim {obs.shape[2]} != {model.config.feature_dim}")


def _encode_all(model: DdnModel, obs: np.ndarray) -> list[Tensor]:
    """Encode every observation position with a single pass through ``f``."""
    n, L, D = obs.shape
    flat = model.f(Tensor(obs.reshape(n * L, D)))
    # split back into per-position (n, latent) tensors via index gathers on the batch
    ids = np.arange(n * L).reshape(n, L)
    return [_take(flat, ids[:, t]) for t in range(L)]


def _take(x: Tensor, rows: np.ndarray) -> Tensor:
    return nx.gather_rows(x, rows)


def loss_forward(model: DdnModel, cur: np.ndarray, actions: np.ndarray, nxt: np.ndarray) -> Tensor:
    """Mean squared latent prediction error over a batch of ``(o_t, a_t, o_{t+1})``."""
    if len(cur) == 0:
        raise UsageError("empty batch")
    x = model.f(Tensor(cur))
    target = model.f(Tensor(nxt))
    pred = model.T(x, model.g(actions))
    return nx.mean(nx.row_sqdist(pred, target))


def loss_conjugate(model: DdnModel, obs: np.ndarray, actions: np.ndarray) -> Tensor:
    """Mean over steps of latent-action squared error plus decoder cross-entropy.

    State inputs are the encoded ground-truth observations; the first step
    conditions on the start token.
    """
    _check_batch(model, obs, actions)
    n, H = actions.shape
    xs = _encode_all(model, obs)
    goal = xs[-1]
    prev = model.g(np.full(n, model.start_token))
    hidden = model.zero_hidden(n)
    terms = []
    for t in range(H):
        abar_hat, hidden = model.P(xs[t], prev, goal, hidden)
        target = model.g(actions[:, t])
        terms.append(nx.mean(nx.row_sqdist(abar_hat, target)))
        terms.append(nx.softmax_xent(model.h(abar_hat), actions[:, t]))
        prev = target
    return nx.scale(_sum(terms), 1.0 / H)


def _sum(terms: Sequence[Tensor]) -> Tensor:
    out = terms[0]
    for t in terms[1:]:
        out = nx.add(out, t)
    return out


@dataclass
class RolloutLosses:
    state: list[Tensor]
    action: list[Tensor]
    total: Tensor


def rollout_losses(model: DdnModel, obs: np.ndarray, actions: np.ndarray, ablation: str = "full") -> RolloutLosses:
    """Interleaved training rollout.

    At step ``t`` the conjugate model reads the current (predicted) state, the
    previous ground-truth action and the goal, and its latent action is scored
    against ``g(a_t)`` and the label ``a_t``. The forward model then advances
    the state; its prediction is scored against ``f(o_{t+1})`` and, in
    ``cross`` mode, becomes the next step's state input.

    ``total = alpha * sum(state terms) + sum(action terms)``. The ``no-P``
    variant drops the action terms and is left unscaled; ``no-T`` drops the
    state terms and holds the conjugate model's state input at ``f(o_0)``.
    """
    if ablation not in ABLATIONS:
        raise UsageError(f"ablation must be one of {ABLATIONS}")
    _check_batch(model, obs, actions)
    cfg = model.config
    n, H = actions.shape
    xs = _encode_all(model, obs)
    goal = xs[-1]
    prev = model.g(np.full(n, model.start_token))
    hidden = model.zero_hidden(n)
    x = xs[0]
    state_terms: list[Tensor] = []
    action_terms: list[Tensor] = []
    for t in range(H):
        target_a = model.g(actions[:, t])
        abar_hat = None
        if ablation != "no-P":
            p_state = xs[0] if ablation == "no-T" else x
            abar_hat, hidden = model.P(p_state, prev, goal, hidden)
            action_terms.append(
                nx.add(
                    nx.mean(nx.row_sqdist(abar_hat, target_a)),
                    nx.softmax_xent(model.h(abar_hat), actions[:, t]),
                )
            )
        if ablation != "no-T":
            a_in = abar_hat if (cfg.forward_input == "predicted" and abar_hat is not None) else target_a
            x_next = model.T(x, a_in)
            state_terms.append(nx.mean(nx.row_sqdist(x_next, xs[t + 1])))
            x = x_next if cfg.rollout == "cross" else xs[t + 1]
        prev = target_a
    if ablation == "no-P":
        total = _sum(state_terms)
    elif ablation == "no-T":
        total = _sum(action_terms)
    else:
        total = nx.add(nx.scale(_sum(state_terms), cfg.alpha), _sum(action_terms))
    return RolloutLosses(state_terms, action_terms, total)


def training_rollout(model: DdnModel, obs: np.ndarray, actions: np.ndarray, ablation: str = "full") -> Tensor:
    """Combined loss of one batch of equal-horizon sequences."""
    return rollout_losses(model, obs, actions, ablation).total
