"""Dense tensors with reverse-mode autodiff, Adam, and a finite-difference checker.

Only what the dual dynamics network needs: affine maps, relu/tanh, concatenation,
row gathers for the action embedding table, squared-error and softmax
cross-entropy reductions. Binary ops require identical shapes; the single
broadcast allowed is the bias row in :func:`affine`.

Training runs in float32. Wrap gradient checks in ``with precision(np.float64):``
and cast the parameters (see :meth:`Tensor.astype`).
"""

from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import DimensionError, NumericError, UsageError

_state = threading.local()


def get_dtype() -> type:
    return getattr(_state, "dtype", np.float32)


def grad_enabled() -> bool:
    return getattr(_state, "grad", True)


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch the dtype used for newly created tensors."""
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise UsageError(f"unsupported precision {dtype!r}")
    prev = get_dtype()
    _state.dtype = dtype
    try:
        yield
    finally:
        _state.dtype = prev


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    prev = grad_enabled()
    _state.grad = False
    try:
        yield
    finally:
        _state.grad = prev


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    """64-bit PCG stream; use :func:`split_rng` for independent children."""
    return np.random.Generator(np.random.PCG64(seed))


def split_rng(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    return list(rng.spawn(n))


class Tensor:
    """A value in the compute graph.

    Leaves created with ``requires_grad=True`` are parameters; every op result
    keeps links to its parents and a closure mapping the output gradient to one
    gradient per parent.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.ascontiguousarray(data, dtype=get_dtype())
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} shape={self.shape} dtype={self.data.dtype}>"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def astype(self, dtype) -> "Tensor":
        """Cast a leaf in place (used to move parameters between precisions)."""
        self.data = np.ascontiguousarray(self.data, dtype=dtype)
        return self

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(out: np.ndarray, op: str) -> None:
    if not np.isfinite(out).all():
        raise NumericError(f"{op} produced a non-finite value")


def make_op(out: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    """Wrap ``out`` as the result of an op; records the node when grads are on."""
    out = np.asarray(out)
    _check_finite(out, op)
    t = Tensor.__new__(Tensor)
    t.data = out
    t.grad = None
    t.name = op
    t.requires_grad = grad_enabled() and any(p.requires_grad for p in parents)
    if t.requires_grad:
        t._parents = tuple(parents)
        t._backward = backward
    else:
        t._parents = ()
        t._backward = None
    return t


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _matrix(a: Tensor, op: str) -> None:
    if a.data.ndim != 2:
        raise DimensionError(f"{op}: expected a 2-D operand, got shape {a.shape}")


# -- primitives ---------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _matrix(a, "matmul")
    _matrix(b, "matmul")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dims {a.shape} @ {b.shape}")
    A, B = a.data, b.data
    return make_op(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g), "matmul")


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` with ``b`` broadcast across rows."""
    _matrix(x, "affine")
    _matrix(w, "affine")
    if x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise DimensionError(f"affine: x{x.shape} w{w.shape} b{b.shape}")
    X, W = x.data, w.data
    return make_op(
        X @ W + b.data,
        (x, w, b),
        lambda g: (g @ W.T, X.T @ g, g.sum(axis=0)),
        "affine",
    )


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return make_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return make_op(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    A, B = a.data, b.data
    return make_op(A * B, (a, b), lambda g: (g * B, g * A), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return make_op(a.data * c, (a,), lambda g: (g * c,), "scale")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_op(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return make_op(y, (a,), lambda g: (g * (1 - y * y),), "tanh")


def square(a: Tensor) -> Tensor:
    A = a.data
    return make_op(A * A, (a,), lambda g: (2 * A * g,), "square")


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not parts:
        raise UsageError("concat of zero tensors")
    nd = parts[0].data.ndim
    ax = axis % nd
    for p in parts[1:]:
        if p.data.ndim != nd or any(
            p.shape[i] != parts[0].shape[i] for i in range(nd) if i != ax
        ):
            raise DimensionError(f"concat: incompatible shapes {[q.shape for q in parts]}")
    sizes = [p.shape[ax] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=ax))

    return make_op(np.concatenate([p.data for p in parts], axis=ax), parts, back, "concat")


def total(a: Tensor) -> Tensor:
    """Sum of every entry, as a scalar."""
    shape = a.shape
    return make_op(a.data.sum(), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.data.size
    if n == 0:
        raise UsageError("mean of an empty tensor")
    return make_op(
        a.data.mean(), (a,), lambda g: (np.broadcast_to(g / n, shape).copy(),), "mean"
    )


def row_sqdist(a: Tensor, b: Tensor) -> Tensor:
    """Per-row squared Euclidean distance, shape ``(n,)``."""
    _same_shape(a, b, "row_sqdist")
    _matrix(a, "row_sqdist")
    d = a.data - b.data

    def back(g):
        ga = 2 * d * g[:, None]
        return ga, -ga

    return make_op((d * d).sum(axis=1), (a, b), back, "row_sqdist")


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean over all entries of ``(a - b)**2``."""
    _same_shape(a, b, "mse")
    d = a.data - b.data
    n = d.size

    def back(g):
        ga = 2 * d * (g / n)
        return ga, -ga

    return make_op(np.mean(d * d), (a, b), back, "mse")


def log_softmax_np(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_np(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits: Tensor, targets) -> Tensor:
    """Mean cross-entropy of softmax(logits) against integer targets.

    Accepts ``(A,)`` logits with a scalar target or ``(n, A)`` with ``(n,)``.
    """
    z = logits.data
    squeeze = z.ndim == 1
    if squeeze:
        z = z[None, :]
    t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if z.ndim != 2 or t.shape != (z.shape[0],):
        raise DimensionError(f"softmax_xent: logits {logits.shape}, targets {t.shape}")
    if t.size and (t.min() < 0 or t.max() >= z.shape[1]):
        raise DimensionError("softmax_xent: target outside the class range")
    n = z.shape[0]
    logp = log_softmax_np(z)
    rows = np.arange(n)
    loss = -logp[rows, t].mean()

    def back(g):
        grad = np.exp(logp)
        grad[rows, t] -= 1
        grad *= g / n
        return (grad[0] if squeeze else grad,)

    return make_op(np.asarray(loss, dtype=z.dtype), (logits,), back, "softmax_xent")


def gather_rows(table: Tensor, ids) -> Tensor:
    """Select rows ``ids`` of a 2-D table (embedding lookup)."""
    _matrix(table, "gather_rows")
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise DimensionError("gather_rows: ids must be 1-D")
    shape = table.shape

    def back(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, idx, g)
        return (out,)

    return make_op(table.data[idx], (table,), back, "gather_rows")


# -- reverse pass ---------------------------------------------------------------


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` with every parent before its children."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to parameter leaves.

    Returns a map keyed by leaf tensor. When ``params`` is given, every one of
    them gets an entry, zero-filled if the loss does not depend on it. Leaf
    ``.grad`` attributes are overwritten, not accumulated across calls.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    leaves: dict[Tensor, np.ndarray] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(topological_order(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    leaves[node] = g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
    if params is not None:
        out = {p: leaves.get(p, np.zeros_like(p.data)) for p in params}
    else:
        out = leaves
    for p, g in out.items():
        p.grad = g
    return out


def grad_check(fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` rebuilds the scalar loss from ``params`` on each call. Run it under
    ``precision(np.float64)`` with float64 parameters; float32 differences are
    too noisy for tight tolerances.
    """
    params = list(params)
    analytic = backward(fn(), params)
    worst = 0.0
    with no_grad():
        for p in params:
            flat = p.data.reshape(-1)
            a = analytic[p].reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = float(fn().data)
                flat[i] = orig - eps
                down = float(fn().data)
                flat[i] = orig
                num = (up - down) / (2 * eps)
                err = abs(a[i] - num) / max(abs(a[i]), abs(num), 1e-8)
                worst = max(worst, float(err))
    return worst


# -- optimisation ---------------------------------------------------------------


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(get_dtype())


class Adam:
    """Adam with bias correction. ``lr`` may be changed between steps."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: dict[Tensor, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1 - self.beta1**t
        c2 = 1 - self.beta2**t
        for i, p in enumerate(self.params):
            g = grads.get(p)
            if g is None:
                continue
            if g.shape != p.shape:
                raise DimensionError(f"adam: grad {g.shape} for param {p.shape}")
            m = self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            v = self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * (g * g)
            if self.lr == 0:
                continue
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype, copy=False)


class ReduceLROnPlateau:
    """Multiply the optimizer's lr by ``factor`` after ``patience`` stalled epochs."""

    def __init__(self, optimizer: Adam, factor: float = 0.5, patience: int = 5, min_lr: float = 0.0):
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, metric: float) -> None:
        if metric < self.best * (1 - 1e-4):
            self.best = metric
            self.bad_epochs = 0
            return
        self.bad_epochs += 1
        if self.bad_epochs > self.patience:
            self.optimizer.lr = max(self.optimizer.lr * self.factor, self.min_lr)
            self.bad_epochs = 0
