"""Plan and ordering metrics, dataset-level evaluation, and the CSV report.

Walkthrough metrics take ``b``: ``b[i]`` is the true position of the clip
placed at position ``i``, so the identity is a perfect ordering. By default
only the middle positions count, since both endpoints are given.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .dataset import Dataset
from .errors import UsageError
from .numerics import make_rng

PLAN_METRICS = ("success_rate", "accuracy", "miou")
ORDER_METRICS = ("hamming", "pairwise_acc")


def _pair(pred: Sequence[int], gt: Sequence[int]) -> tuple[list[int], list[int]]:
    pred, gt = [int(a) for a in pred], [int(a) for a in gt]
    if len(pred) != len(gt):
        raise UsageError(f"plan lengths differ: {len(pred)} vs {len(gt)}")
    return pred, gt


def success(pred: Sequence[int], gt: Sequence[int]) -> int:
    pred, gt = _pair(pred, gt)
    return int(pred == gt)


def step_accuracy(pred: Sequence[int], gt: Sequence[int]) -> float:
    pred, gt = _pair(pred, gt)
    if not gt:
        raise UsageError("empty plan")
    return sum(p == g for p, g in zip(pred, gt)) / len(gt)


def iou(pred: Sequence[int], gt: Sequence[int]) -> float:
    if len(pred) == 0 or len(gt) == 0:
        raise UsageError("IoU of an empty plan")
    a, b = {int(x) for x in pred}, {int(x) for x in gt}
    return len(a & b) / len(a | b)


def _batch(preds, gts) -> list[tuple[list[int], list[int]]]:
    preds, gts = list(preds), list(gts)
    if len(preds) != len(gts):
        raise UsageError(f"{len(preds)} predictions for {len(gts)} references")
    if not preds:
        raise UsageError("no examples")
    return [_pair(p, g) for p, g in zip(preds, gts)]


def success_rate(preds: Iterable[Sequence[int]], gts: Iterable[Sequence[int]]) -> float:
    pairs = _batch(preds, gts)
    return sum(success(p, g) for p, g in pairs) / len(pairs)


def accuracy(preds: Iterable[Sequence[int]], gts: Iterable[Sequence[int]], per_class: bool = False) -> float:
    """Per-example step accuracy averaged over examples.

    With ``per_class`` the average is instead over ground-truth action
    classes, each class scored on the positions where it is the reference.
    """
    pairs = _batch(preds, gts)
    if not per_class:
        return sum(step_accuracy(p, g) for p, g in pairs) / len(pairs)
    hits: dict[int, list[int]] = {}
    for p, g in pairs:
        for a, b in zip(p, g):
            hits.setdefault(b, []).append(int(a == b))
    if not hits:
        raise UsageError("empty plans")
    return sum(sum(v) / len(v) for _, v in sorted(hits.items())) / len(hits)


def mean_iou(preds: Iterable[Sequence[int]], gts: Iterable[Sequence[int]]) -> float:
    pairs = _batch(preds, gts)
    return sum(iou(p, g) for p, g in pairs) / len(pairs)


def _check_order(b: Sequence[int]) -> list[int]:
    b = [int(x) for x in b]
    L = len(b)
    if L < 2 or sorted(b) != list(range(L)):
        raise UsageError(f"not a permutation of 0..{L - 1}: {b}")
    if b[0] != 0 or b[-1] != L - 1:
        raise UsageError("ordering must keep the first and last clip fixed")
    return b


def hamming(b: Sequence[int], full: bool = False) -> int:
    """Positions whose clip is out of place (middle positions unless ``full``)."""
    b = _check_order(b)
    idx = range(len(b)) if full else range(1, len(b) - 1)
    return sum(b[i] != i for i in idx)


def pairwise_accuracy(b: Sequence[int], full: bool = False) -> float:
    """Fraction of position pairs ``i < j`` with ``b[i] < b[j]``.

    Middle positions only unless ``full``; with fewer than two scored
    positions there is nothing to invert and the result is 1.0.
    """
    b = _check_order(b)
    idx = list(range(len(b))) if full else list(range(1, len(b) - 1))
    total = ok = 0
    for x in range(len(idx)):
        for y in range(x + 1, len(idx)):
            total += 1
            ok += b[idx[x]] < b[idx[y]]
    return ok / total if total else 1.0


def relative_order(order: Sequence[int], truth: Sequence[int]) -> list[int]:
    """``b`` for a predicted pool ordering given the pool index of each true position."""
    pos = {int(p): i for i, p in enumerate(truth)}
    if len(pos) != len(truth) or sorted(int(x) for x in order) != sorted(pos):
        raise UsageError("prediction and truth index different pools")
    return [pos[int(p)] for p in order]


def shuffle_pool(observations: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, list[int]]:
    """Shuffle the middle clips; returns the pool and the pool index of each true position."""
    L = len(observations)
    perm = np.arange(L)
    if L > 3:
        perm[1:-1] = 1 + rng.permutation(L - 2)
    pool = observations[perm]
    truth = [int(np.flatnonzero(perm == i)[0]) for i in range(L)]
    return pool, truth


# -- reports -----------------------------------------------------------------------


@dataclass
class ReportRow:
    horizon: int
    metric: str
    value: float
    n: int


@dataclass
class EvalReport:
    rows: list[ReportRow] = field(default_factory=list)
    seed: int = 0
    config: dict[str, str] = field(default_factory=dict)

    def value(self, horizon: int, metric: str) -> float:
        for r in self.rows:
            if r.horizon == horizon and r.metric == metric:
                return r.value
        raise KeyError((horizon, metric))

    def horizons(self) -> list[int]:
        return sorted({r.horizon for r in self.rows})

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k, v in sorted(self.config.items()):
            buf.write(f"# {k}={v}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["horizon", "metric", "value", "n", "seed"])
        for r in self.rows:
            w.writerow([r.horizon, r.metric, repr(float(r.value)), r.n, self.seed])
        return buf.getvalue()


def write_report(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(report.to_csv(), encoding="utf-8")


def read_report(path: str | Path) -> EvalReport:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    config = {}
    body = []
    for line in lines:
        if line.startswith("# "):
            k, _, v = line[2:].partition("=")
            config[k] = v
        else:
            body.append(line)
    rows, seed = [], 0
    for rec in csv.DictReader(body):
        rows.append(ReportRow(int(rec["horizon"]), rec["metric"], float(rec["value"]), int(rec["n"])))
        seed = int(rec["seed"])
    return EvalReport(rows, seed, config)


Policy = Callable[[np.ndarray, np.ndarray, int], Sequence[int]]
Orderer = Callable[[np.ndarray], Sequence[int]]


def score_plans(preds, gts, horizon: int, per_class: bool = False) -> list[ReportRow]:
    preds, gts = list(preds), list(gts)
    if not gts:
        return [ReportRow(horizon, m, math.nan, 0) for m in PLAN_METRICS]
    n = len(gts)
    return [
        ReportRow(horizon, "success_rate", success_rate(preds, gts), n),
        ReportRow(horizon, "accuracy", accuracy(preds, gts, per_class), n),
        ReportRow(horizon, "miou", mean_iou(preds, gts), n),
    ]


def score_orders(bs: Sequence[Sequence[int]], horizon: int, full: bool = False) -> list[ReportRow]:
    if not bs:
        return [ReportRow(horizon, m, math.nan, 0) for m in ORDER_METRICS]
    n = len(bs)
    return [
        ReportRow(horizon, "hamming", sum(hamming(b, full) for b in bs) / n, n),
        ReportRow(horizon, "pairwise_acc", sum(pairwise_accuracy(b, full) for b in bs) / n, n),
    ]


def evaluate(
    policy: Policy,
    dataset: Dataset,
    horizons: Sequence[int] | None = None,
    *,
    seed: int = 0,
    per_class: bool = False,
    config: dict[str, str] | None = None,
) -> EvalReport:
    """Plan every test sequence of each horizon and score it.

    A horizon with no sequences yields rows with ``n = 0`` and NaN values.
    """
    if len(dataset) == 0:
        raise UsageError("empty test set")
    horizons = list(horizons) if horizons is not None else dataset.horizons()
    report = EvalReport(seed=seed, config=dict(config or {}))
    for h in horizons:
        seqs = dataset.with_horizon(h).sequences
        preds = [list(policy(s.start, s.goal, h)) for s in seqs]
        report.rows += score_plans(preds, [s.actions for s in seqs], h, per_class)
    return report


def evaluate_walkthrough(
    orderer: Orderer,
    dataset: Dataset,
    horizons: Sequence[int] | None = None,
    *,
    seed: int = 0,
    full: bool = False,
    config: dict[str, str] | None = None,
) -> EvalReport:
    """Shuffle each sequence's middle clips (seeded) and score the recovered order."""
    if len(dataset) == 0:
        raise UsageError("empty test set")
    horizons = list(horizons) if horizons is not None else dataset.horizons()
    report = EvalReport(seed=seed, config=dict(config or {}))
    rng = make_rng(seed)
    for h in horizons:
        bs = []
        for s in dataset.with_horizon(h).sequences:
            pool, truth = shuffle_pool(s.observations, rng)
            bs.append(relative_order(orderer(pool), truth))
        report.rows += score_orders(bs, h, full)
    return report
