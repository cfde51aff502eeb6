"""End-to-end acceptance checks.

Each test appends one ``CRITERION k: PASS|FAIL ...`` line, printed in the
terminal summary. Run directly with ``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import itertools
import sys
import time
from dataclasses import dataclass

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, random_batch, small_model, toy_dataset
from ddn import numerics as nx
from ddn.baselines import random_plan, rnn_policy_plan
from ddn.cli import main
from ddn.dataset import Dataset, dataset_from_bytes, dataset_to_bytes
from ddn.errors import FormatError
from ddn.metrics import evaluate, evaluate_walkthrough, hamming, iou, pairwise_accuracy, step_accuracy, success
from ddn.model import DdnModel, ModelConfig, rollout_losses
from ddn.planner import PlannerConfig, plan, sqdist
from ddn.synth import make_dataset, make_renderer, sample_task
from ddn.training import TrainConfig, load_checkpoint, save_checkpoint, train
from ddn.walkthrough import exhaustive_order, held_karp_order, walkthrough_plan

SEEDS = range(5)
NUM_ACTIONS = 12
KB = 3


def record(k: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {k}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# -- 1: gradients --------------------------------------------------------------


def test_criterion_1_gradient_check():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = 0.0
    with nx.precision(np.float64):
        for ablation in ("full", "no-P", "no-T"):
            for H in (1, 2, 3):
                for fwd in ("embedded", "predicted"):
                    m = small_model(H, np.float64, horizon=H, forward_input=fwd)
                    obs, acts = random_batch(rng, 3, H, 6, 4)
                    err = nx.grad_check(lambda: rollout_losses(m, obs, acts, ablation).total, m.parameters(), eps=1e-6)
                    worst = max(worst, err)
    elapsed = time.perf_counter() - t0
    record(1, worst < 1e-4 and elapsed < 10, f"max relative error {worst:.2e}, {elapsed:.1f}s")


# -- 2: planner vs exhaustive search -------------------------------------------------


def test_criterion_2_planner_matches_exhaustive():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    cfg = PlannerConfig(horizon=3, beam_size=64, max_iterations=200, epsilon=0.0)
    worst = 0.0
    for seed in range(100):
        m = small_model(seed, np.float64)
        o_s, o_g = rng.standard_normal(6), rng.standard_normal(6)
        table = m.embed_action(np.arange(4))
        xg = m.encode_state(o_g)
        ref = np.inf
        for seq in itertools.product(range(4), repeat=3):
            x = m.encode_state(o_s)
            for a in seq:
                x = m.forward_step(x, table[a])
            ref = min(ref, sqdist(x, xg))
        worst = max(worst, abs(plan(o_s, o_g, m, cfg).distance - ref))
    elapsed = time.perf_counter() - t0
    record(2, worst <= 1e-6 and elapsed < 30, f"max |planner - exhaustive| {worst:.1e} on 100 models, {elapsed:.1f}s")


# -- 3: Held-Karp vs enumeration -------------------------------------------------------


def test_criterion_3_held_karp_matches_exhaustive():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    mismatches = 0
    for i in range(200):
        L = 5 + i % 4
        R = rng.standard_normal((L, L))
        np.fill_diagonal(R, -np.inf)
        if held_karp_order(R)[1] != exhaustive_order(R)[1]:
            mismatches += 1
    elapsed = time.perf_counter() - t0
    record(3, mismatches == 0 and elapsed < 30, f"{mismatches}/200 score mismatches, {elapsed:.1f}s")


# -- 4: metrics vs naive references --------------------------------------------------


def _naive_plan_metrics(p, g):
    same = [p[i] == g[i] for i in range(len(g))]
    sp, sg = set(p), set(g)
    return int(all(same)), sum(same) / len(g), len(sp & sg) / len(sp | sg)


def _naive_order_metrics(b):
    mid = b[1:-1]
    ham = sum(1 for i, x in enumerate(mid, 1) if x != i)
    pairs = [(x, y) for i, x in enumerate(mid) for y in mid[i + 1 :]]
    return ham, (sum(x < y for x, y in pairs) / len(pairs)) if pairs else 1.0


def test_criterion_4_metric_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    bad = 0
    for _ in range(1000):
        H, A = int(rng.integers(1, 7)), int(rng.integers(1, 6))
        g = rng.integers(A, size=H).tolist()
        p = g if rng.random() < 0.2 else rng.integers(A, size=H).tolist()
        bad += (success(p, g), step_accuracy(p, g), iou(p, g)) != _naive_plan_metrics(p, g)
        L = int(rng.integers(2, 10))
        b = [0, *(1 + rng.permutation(L - 2)).tolist(), L - 1]
        bad += (hamming(b), pairwise_accuracy(b)) != _naive_order_metrics(b)

    data = Dataset(6, 4, toy_dataset(1000, horizon=3).sequences + toy_dataset(1000, horizon=4, seed=1).sequences)
    order_rng = np.random.default_rng(40)
    report = evaluate_walkthrough(lambda pool: [0, *(1 + order_rng.permutation(len(pool) - 2)), len(pool) - 1],
                                  data, seed=4)
    h4, h5 = report.value(3, "hamming"), report.value(4, "hamming")
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and abs(h4 - 1.0) <= 0.15 and abs(h5 - 2.0) <= 0.15 and elapsed < 60
    record(4, ok, f"{bad} reference mismatches; random Hamming L=4 {h4:.3f}, L=5 {h5:.3f}, {elapsed:.1f}s")


# -- 5-7: trained models on the synthetic family ----------------------------------------


@dataclass
class SeedRun:
    seed: int
    test: Dataset
    models: dict[str, DdnModel]


def _train_seed(seed: int) -> SeedRun:
    schema = sample_task(seed, 8, NUM_ACTIONS, (3,), max_horizon=5)
    renderer = make_renderer(seed, 8, 64, 0.05)
    train_set, test_set = make_dataset(schema, renderer, 500, (3, 4, 5), seed)
    h3 = train_set.with_horizon(3)
    mc = ModelConfig(64, 128, NUM_ACTIONS, 128, alpha=1.0)
    models = {}
    for ablation in ("full", "no-T", "no-P"):
        tc = TrainConfig(epochs=200, batch_size=32, lr=1e-3, seed=seed, ablation=ablation)
        models[ablation] = train(h3, mc, tc).model
    return SeedRun(seed, test_set, models)


@pytest.fixture(scope="module")
def runs() -> list[SeedRun]:
    return [_train_seed(s) for s in SEEDS]


def _ddn(model):
    return lambda o_s, o_g, h: plan(o_s, o_g, model, PlannerConfig(h, branching=KB)).actions


def _no_p(model):
    return lambda o_s, o_g, h: plan(o_s, o_g, model, PlannerConfig(h, uniform_proposals=True)).actions


def _no_t(model):
    return lambda o_s, o_g, h: rnn_policy_plan(o_s, o_g, model, h)


def _random(seed):
    rng = nx.make_rng([seed, 99])
    return lambda o_s, o_g, h: random_plan(h, NUM_ACTIONS, rng)


def test_criterion_5_planning_beats_baselines(runs):
    chance = NUM_ACTIONS ** -3
    table, wins = [], 0
    for r in runs:
        s = {name: evaluate(pol, r.test, [3]).value(3, "success_rate") for name, pol in [
            ("ours", _ddn(r.models["full"])),
            ("no-T", _no_t(r.models["no-T"])),
            ("no-P", _no_p(r.models["no-P"])),
            ("random", _random(r.seed)),
        ]}
        table.append(s)
        wins += s["ours"] > s["no-T"] > s["random"] and s["ours"] > s["no-P"]
    mean = float(np.mean([s["ours"] for s in table]))
    detail = "; ".join(
        f"seed {r.seed}: ours {s['ours']:.3f} no-T {s['no-T']:.3f} no-P {s['no-P']:.3f} random {s['random']:.3f}"
        for r, s in zip(runs, table)
    )
    # 5/5 one-sided sign test: p = 1/32
    ok = mean >= 0.5 and mean >= 10 * chance and wins == len(runs)
    record(5, ok, f"mean success {mean:.3f} (chance {chance:.1e}), ordering holds on {wins}/{len(runs)} seeds [{detail}]")


def test_criterion_6_walkthrough_hamming(runs):
    per_seed = []
    for r in runs:
        model = r.models["full"]
        report = evaluate_walkthrough(lambda pool: walkthrough_plan(pool, model), r.test, [4], seed=r.seed)
        per_seed.append(report.value(4, "hamming"))
    mean = float(np.mean(per_seed))
    record(6, mean <= 1.0, f"mean Hamming at L=5 {mean:.3f} (random 2.0) per seed {[round(h, 3) for h in per_seed]}")


def test_criterion_7_success_falls_with_horizon(runs):
    curves, ok = [], True
    for r in runs:
        report = evaluate(_ddn(r.models["full"]), r.test, [3, 4, 5])
        c = [report.value(h, "success_rate") for h in (3, 4, 5)]
        curves.append(c)
        ok &= c[0] >= c[1] >= c[2]
    detail = "; ".join(f"seed {r.seed}: " + " ".join(f"{v:.3f}" for v in c) for r, c in zip(runs, curves))
    record(7, ok, f"success at H=3,4,5 non-increasing on every seed [{detail}]")


# -- 8: determinism and formats -----------------------------------------------------


def test_criterion_8_determinism_and_formats(tmp_path):
    d = tmp_path
    steps = [
        (["gen", "--out", str(d / "data"), "--n", "20", "--horizon", "3", "--seed", "2"],
         [d / "data/train.dds", d / "data/test.dds", d / "data/schema.txt"]),
        (["train", "--data", str(d / "data/train.dds"), "--out", str(d / "m.ddn"), "--epochs", "2",
          "--latent-dim", "16", "--hidden-dim", "16", "--batch", "8", "--seed", "2"],
         [d / "m.ddn", d / "m.ddn.loss.csv"]),
        (["plan", "--checkpoint", str(d / "m.ddn"), "--data", str(d / "data/test.dds"), "--out", str(d / "p.csv")],
         [d / "p.csv"]),
        (["eval", "--plans", str(d / "p.csv"), "--out", str(d / "e.csv")], [d / "e.csv"]),
    ]
    first = {}
    for argv, outs in steps:
        assert main(argv) == 0
        first.update({p: p.read_bytes() for p in outs})
    for argv, _ in steps:
        assert main(argv) == 0
    reruns_equal = all(p.read_bytes() == v for p, v in first.items())

    ckpt_raw = (d / "m.ddn").read_bytes()
    data_raw = (d / "data/train.dds").read_bytes()
    round_trips = (save_checkpoint(load_checkpoint(ckpt_raw)) == ckpt_raw
                   and dataset_to_bytes(dataset_from_bytes(data_raw)) == data_raw)

    offsets = []
    for raw, load in ((ckpt_raw, load_checkpoint), (data_raw, dataset_from_bytes)):
        try:
            load(b"\x00" + raw[1:])
        except FormatError as e:
            offsets.append(e.offset)
    rejected = offsets == [0, 0]
    ok = reruns_equal and round_trips and rejected
    record(8, ok, f"reruns identical: {reruns_equal}; round trips exact: {round_trips}; "
                  f"bad magic rejected at offsets {offsets}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))
