"""Mini-batch training loop and the ``DDN1`` checkpoint container.

Checkpoint layout (little-endian)::

    b"DDN1" | u32 version=1 | u32 header_len | header (UTF-8 key=value lines)
    parameters in DdnModel declaration order, raw float32

Header values use ``repr`` for floats so a load/save cycle is byte-identical.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import numerics as nx
from .dataset import Dataset
from .errors import FormatError, UsageError
from .model import ABLATIONS, DdnModel, ModelConfig, rollout_losses

log = logging.getLogger(__name__)

MAGIC = b"DDN1"
VERSION = 1
_PRE = struct.Struct("<4sII")


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 256
    lr: float = 1e-4
    lr_decay: float = 0.5
    patience: int = 5
    val_fraction: float = 0.1
    seed: int = 0
    ablation: str = "full"

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise UsageError(f"ablation must be one of {ABLATIONS}")
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0:
            raise UsageError("epochs >= 0, batch_size >= 1 and lr >= 0 required")


@dataclass
class Checkpoint:
    model: DdnModel
    ablation: str = "full"
    epoch: int = 0
    initial_loss: float = math.nan
    loss_history: list[float] = field(default_factory=list)
    val_history: list[float] = field(default_factory=list)
    lr_history: list[float] = field(default_factory=list)
    # free-form run metadata echoed into the header (e.g. the resolved CLI config)
    extra: dict[str, str] = field(default_factory=dict)


def _groups(dataset: Dataset, indices: list[int]) -> dict[int, list[int]]:
    out: dict[int, list[int]] = {}
    for i in indices:
        out.setdefault(dataset.sequences[i].horizon, []).append(i)
    return out


def _batches(dataset: Dataset, indices: list[int], batch_size: int, rng: np.random.Generator | None):
    """Equal-horizon batches; shuffled when ``rng`` is given."""
    batches = []
    for _, idx in sorted(_groups(dataset, indices).items()):
        idx = list(rng.permutation(idx)) if rng is not None else idx
        for s in range(0, len(idx), batch_size):
            batches.append(idx[s : s + batch_size])
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


def dataset_loss(model: DdnModel, dataset: Dataset, indices: list[int], ablation: str, batch_size: int = 1024) -> float:
    """Sequence-weighted mean of the combined loss, without recording a graph."""
    if not indices:
        return math.nan
    tot = 0.0
    with nx.no_grad():
        for b in _batches(dataset, indices, batch_size, None):
            obs, acts = dataset.stack(b)
            tot += rollout_losses(model, obs, acts, ablation).total.item() * len(b)
    return tot / len(indices)


def train(
    dataset: Dataset,
    model_config: ModelConfig | None = None,
    train_config: TrainConfig | None = None,
    model: DdnModel | None = None,
) -> Checkpoint:
    """Fit a model with Adam and plateau lr halving on a held-out validation split."""
    if len(dataset) == 0:
        raise UsageError("empty dataset")
    tc = train_config or TrainConfig()
    if model is None:
        mc = model_config or ModelConfig(
            feature_dim=dataset.feature_dim,
            num_actions=dataset.num_actions,
            horizon=max(dataset.horizons()),
        )
        model = DdnModel(mc, seed=tc.seed)
    mc = model.config
    if mc.feature_dim != dataset.feature_dim or mc.num_actions != dataset.num_actions:
        raise UsageError("model and dataset dimensions disagree")

    rng = nx.make_rng(tc.seed + 1)
    split_rng, shuffle_rng = rng.spawn(2)
    order = [int(i) for i in split_rng.permutation(len(dataset))]
    n_val = int(len(dataset) * tc.val_fraction) if len(dataset) >= 10 else 0
    val_idx, train_idx = sorted(order[:n_val]), sorted(order[n_val:])
    batch_size = min(tc.batch_size, len(train_idx))

    params = model.parameters()
    opt = nx.Adam(params, lr=tc.lr)
    sched = nx.ReduceLROnPlateau(opt, factor=tc.lr_decay, patience=tc.patience)
    ckpt = Checkpoint(model, ablation=tc.ablation)
    ckpt.initial_loss = dataset_loss(model, dataset, train_idx, tc.ablation)

    for epoch in range(tc.epochs):
        seen, running = 0, 0.0
        for b in _batches(dataset, train_idx, batch_size, shuffle_rng):
            obs, acts = dataset.stack(b)
            loss = rollout_losses(model, obs, acts, tc.ablation).total
            grads = nx.backward(loss, params)
            opt.step(grads)
            running += loss.item() * len(b)
            seen += len(b)
        train_loss = running / seen
        val_loss = dataset_loss(model, dataset, val_idx, tc.ablation) if val_idx else train_loss
        ckpt.loss_history.append(train_loss)
        ckpt.val_history.append(val_loss)
        ckpt.lr_history.append(opt.lr)
        sched.step(val_loss)
        ckpt.epoch = epoch + 1
        log.debug("epoch %d loss %.5f val %.5f lr %.2e", epoch + 1, train_loss, val_loss, opt.lr)
    return ckpt


# -- serialization ---------------------------------------------------------------

_CONFIG_KEYS = [f.name for f in fields(ModelConfig)]


def _fmt_list(xs: list[float]) -> str:
    return ",".join(repr(float(x)) for x in xs)


def _parse_list(s: str) -> list[float]:
    return [float(x) for x in s.split(",")] if s else []


def save_checkpoint(ckpt: Checkpoint) -> bytes:
    model = ckpt.model
    lines = [f"{k}={getattr(model.config, k)!r}" if isinstance(getattr(model.config, k), float)
             else f"{k}={getattr(model.config, k)}" for k in _CONFIG_KEYS]
    lines += [
        f"ablation={ckpt.ablation}",
        f"epoch={ckpt.epoch}",
        f"initial_loss={ckpt.initial_loss!r}",
        f"loss_history={_fmt_list(ckpt.loss_history)}",
        f"val_history={_fmt_list(ckpt.val_history)}",
        f"lr_history={_fmt_list(ckpt.lr_history)}",
        "params=" + ";".join(f"{n}:{'x'.join(map(str, p.shape))}" for n, p in model.params.items()),
    ]
    for k, v in sorted(ckpt.extra.items()):
        if "\n" in f"{k}{v}" or "=" in k:
            raise UsageError(f"metadata key/value not representable: {k!r}")
        lines.append(f"extra.{k}={v}")
    header = ("\n".join(lines) + "\n").encode("utf-8")
    body = b"".join(np.ascontiguousarray(p.data, dtype="<f4").tobytes() for p in model.params.values())
    return _PRE.pack(MAGIC, VERSION, len(header)) + header + body


def read_header(raw: bytes) -> tuple[dict[str, str], int]:
    """Parse the magic, version and header; returns ``(fields, body_offset)``."""
    if len(raw) < _PRE.size:
        raise FormatError("truncated checkpoint preamble", len(raw))
    magic, version, hlen = _PRE.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    end = _PRE.size + hlen
    if end > len(raw):
        raise FormatError("truncated checkpoint header", len(raw))
    try:
        text = raw[_PRE.size : end].decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError("header is not UTF-8", _PRE.size + e.start) from None
    out: dict[str, str] = {}
    pos = _PRE.size
    for line in text.splitlines(keepends=True):
        if line.strip():
            if "=" not in line:
                raise FormatError(f"header line without '=': {line.strip()!r}", pos)
            k, v = line.rstrip("\n").split("=", 1)
            out[k] = v
        pos += len(line.encode("utf-8"))
    return out, end


def load_checkpoint(raw: bytes) -> Checkpoint:
    head, pos = read_header(raw)
    try:
        kw = {}
        for f in fields(ModelConfig):
            v = head[f.name]
            kw[f.name] = {"int": int, "float": float, "str": str}[f.type](v)
        config = ModelConfig(**kw)
    except (KeyError, ValueError, UsageError) as e:
        raise FormatError(f"bad model config in header: {e}", _PRE.size) from None
    model = DdnModel.__new__(DdnModel)
    model.config = config
    template = DdnModel(config, seed=0)
    declared = head.get("params", "")
    expect = ";".join(f"{n}:{'x'.join(map(str, p.shape))}" for n, p in template.params.items())
    if declared != expect:
        raise FormatError("parameter table does not match the model config", _PRE.size)
    model.params = template.params
    for name, p in model.params.items():
        nbytes = 4 * p.data.size
        if pos + nbytes > len(raw):
            raise FormatError(f"truncated inside parameter {name}", len(raw))
        p.data = np.frombuffer(raw, dtype="<f4", count=p.data.size, offset=pos).reshape(p.shape).astype(np.float32)
        pos += nbytes
    if pos != len(raw):
        raise FormatError(f"{len(raw) - pos} trailing bytes", pos)
    extra = {k[len("extra."):]: v for k, v in head.items() if k.startswith("extra.")}
    return Checkpoint(
        model,
        ablation=head.get("ablation", "full"),
        epoch=int(head.get("epoch", "0")),
        initial_loss=float(head.get("initial_loss", "nan")),
        loss_history=_parse_list(head.get("loss_history", "")),
        val_history=_parse_list(head.get("val_history", "")),
        lr_history=_parse_list(head.get("lr_history", "")),
        extra=extra,
    )


def write_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_bytes(save_checkpoint(ckpt))


def read_checkpoint(path: str | Path) -> Checkpoint:
    return load_checkpoint(Path(path).read_bytes())
