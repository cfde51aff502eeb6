"""Demonstration sequences and the ``DDS1`` binary container.

Layout (all little-endian)::

    b"DDS1" | u32 version=1 | u32 D | u32 A | u32 N
    N x ( u32 L | L*D float32 observations | (L-1) u32 action ids )

The same file serves synthetic data and externally extracted features.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, UsageError, ValidationError

MAGIC = b"DDS1"
VERSION = 1
_HEAD = struct.Struct("<4sIIII")
_U32 = struct.Struct("<I")


@dataclass
class SequenceExample:
    """``L`` observations and the ``L - 1`` actions between consecutive ones."""

    observations: np.ndarray
    actions: np.ndarray
    # ground-truth world states; only known for synthetic data, never serialized
    states: tuple[int, ...] | None = None

    @property
    def horizon(self) -> int:
        return len(self.actions)

    @property
    def start(self) -> np.ndarray:
        return self.observations[0]

    @property
    def goal(self) -> np.ndarray:
        return self.observations[-1]


@dataclass
class Dataset:
    feature_dim: int
    num_actions: int
    sequences: list[SequenceExample] = field(default_factory=list)
    split: str = "train"

    def __len__(self) -> int:
        return len(self.sequences)

    def horizons(self) -> list[int]:
        return sorted({s.horizon for s in self.sequences})

    def with_horizon(self, horizon: int) -> "Dataset":
        """Subset of sequences with exactly ``horizon`` actions, in order."""
        keep = [s for s in self.sequences if s.horizon == horizon]
        return Dataset(self.feature_dim, self.num_actions, keep, self.split)

    def stack(self, indices) -> tuple[np.ndarray, np.ndarray]:
        """``(n, L, D)`` observations and ``(n, L-1)`` actions for equal-length sequences."""
        seqs = [self.sequences[i] for i in indices]
        if not seqs:
            raise UsageError("cannot stack zero sequences")
        if len({s.horizon for s in seqs}) != 1:
            raise UsageError("stacked sequences must share a horizon")
        obs = np.stack([s.observations for s in seqs]).astype(np.float32, copy=False)
        acts = np.stack([s.actions for s in seqs]).astype(np.int64, copy=False)
        return obs, acts

    def triplets(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Sliding-window ``(o_t, a_t, o_{t+1})`` over every sequence."""
        cur, act, nxt = [], [], []
        for s in self.sequences:
            cur.append(s.observations[:-1])
            act.append(s.actions)
            nxt.append(s.observations[1:])
        if not cur:
            raise UsageError("dataset is empty")
        return np.concatenate(cur), np.concatenate(act), np.concatenate(nxt)

    def validate(self) -> None:
        for i, s in enumerate(self.sequences):
            obs = s.observations
            if obs.ndim != 2 or obs.shape[1] != self.feature_dim:
                raise ValidationError(
                    f"sequence {i}: observations have shape {obs.shape}, expected (L, {self.feature_dim})"
                )
            if len(obs) < 2 or len(s.actions) != len(obs) - 1:
                raise ValidationError(
                    f"sequence {i}: {len(obs)} observations but {len(s.actions)} actions"
                )
            if len(s.actions) and (s.actions.min() < 0 or s.actions.max() >= self.num_actions):
                raise ValidationError(
                    f"sequence {i}: action id outside [0, {self.num_actions})"
                )
            if not np.isfinite(obs).all():
                raise ValidationError(f"sequence {i}: non-finite observation")


def dataset_to_bytes(d: Dataset) -> bytes:
    d.validate()
    buf = io.BytesIO()
    buf.write(_HEAD.pack(MAGIC, VERSION, d.feature_dim, d.num_actions, len(d.sequences)))
    for s in d.sequences:
        buf.write(_U32.pack(len(s.observations)))
        buf.write(np.ascontiguousarray(s.observations, dtype="<f4").tobytes())
        buf.write(np.ascontiguousarray(s.actions, dtype="<u4").tobytes())
    return buf.getvalue()


def dataset_from_bytes(raw: bytes, split: str = "train") -> Dataset:
    if len(raw) < _HEAD.size:
        raise FormatError("truncated dataset header", len(raw))
    magic, version, dim, num_actions, n = _HEAD.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported dataset version {version}", 4)
    if dim == 0:
        raise FormatError("feature dimension is zero", 8)
    pos = _HEAD.size
    seqs = []
    for i in range(n):
        if pos + 4 > len(raw):
            raise FormatError(f"truncated before sequence {i}", pos)
        (length,) = _U32.unpack_from(raw, pos)
        pos += 4
        if length < 2:
            raise FormatError(f"sequence {i} has length {length} < 2", pos - 4)
        need = 4 * length * dim + 4 * (length - 1)
        if pos + need > len(raw):
            raise FormatError(f"truncated inside sequence {i}", len(raw))
        obs = np.frombuffer(raw, dtype="<f4", count=length * dim, offset=pos)
        pos += 4 * length * dim
        acts = np.frombuffer(raw, dtype="<u4", count=length - 1, offset=pos)
        pos += 4 * (length - 1)
        seqs.append(
            SequenceExample(
                obs.reshape(length, dim).astype(np.float32),
                acts.astype(np.int64),
            )
        )
    if pos != len(raw):
        raise FormatError(f"{len(raw) - pos} trailing bytes", pos)
    d = Dataset(dim, num_actions, seqs, split)
    d.validate()
    return d


def write_dataset(d: Dataset, path: str | Path) -> None:
    Path(path).write_bytes(dataset_to_bytes(d))


def read_dataset(path: str | Path, split: str | None = None) -> Dataset:
    path = Path(path)
    return dataset_from_bytes(path.read_bytes(), split or path.stem)
