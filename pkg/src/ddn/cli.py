"""Command-line entry point: ``ddn gen|train|plan|walkthrough|eval|inspect``.

Settings come from built-in defaults, then ``--config FILE`` (``key=value``
lines, ``#`` comments), then explicit flags. Every CSV written starts with the
resolved settings as ``# key=value`` lines.

Exit codes: 0 success, 1 other failure, 2 configuration or usage error,
3 malformed input file.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

from . import baselines, metrics
from .dataset import MAGIC as DDS_MAGIC
from .dataset import dataset_from_bytes, read_dataset, write_dataset
from .errors import ConfigError, DdnError, FormatError, UsageError, ValidationError
from .model import ModelConfig
from .numerics import make_rng
from .planner import PlannerConfig, greedy_rollout, plan
from .synth import make_dataset, make_renderer, sample_task, schema_to_text
from .training import MAGIC as DDN_MAGIC
from .training import TrainConfig, read_checkpoint, read_header, train, write_checkpoint
from .walkthrough import walkthrough_plan

log = logging.getLogger("ddn")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_FORMAT = 0, 1, 2, 3


def _int_list(text: str) -> list[int]:
    try:
        out = [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None
    if not out:
        raise ConfigError("empty integer list")
    return out


@dataclass(frozen=True)
class Key:
    type: Callable[[str], Any]
    default: Any
    help: str


KEYS: dict[str, Key] = {
    "seed": Key(int, 0, "master seed"),
    "threads": Key(int, 1, "worker threads for per-sequence planning (results are unchanged)"),
    # gen
    "out": Key(str, None, "output file or directory"),
    "n": Key(int, 500, "sequences per horizon"),
    "horizon": Key(_int_list, [3], "horizon(s), comma separated"),
    "num_predicates": Key(int, 8, "predicates per world state"),
    "num_actions": Key(int, 12, "number of actions"),
    "feature_dim": Key(int, 64, "observation dimension"),
    "sigma": Key(float, 0.05, "observation noise"),
    # train
    "data": Key(str, None, "DDS1 dataset path"),
    "loss_csv": Key(str, None, "per-epoch loss CSV (default: <out>.loss.csv)"),
    "latent_dim": Key(int, 128, "latent size"),
    "hidden_dim": Key(int, 128, "hidden size"),
    "alpha": Key(float, 0.001, "state-loss weight"),
    "lr": Key(float, 1e-4, "Adam learning rate"),
    "batch": Key(int, 256, "batch size"),
    "epochs": Key(int, 200, "training epochs"),
    "ablation": Key(str, "full", "full | no-P | no-T"),
    "rollout": Key(str, "cross", "cross | teacher"),
    # plan / walkthrough / eval
    "checkpoint": Key(str, None, "DDN1 checkpoint path"),
    "policy": Key(str, "ddn", "ddn | no-P | no-T | greedy | random | retrieval"),
    "index": Key(str, None, "training DDS1 file for the retrieval policy"),
    "beta": Key(int, None, "search budget (default 20*H)"),
    "eta": Key(int, 20, "beam size"),
    "epsilon": Key(float, 1e-5, "goal threshold"),
    "kb": Key(int, None, "proposals per expansion (default min(A, 20))"),
    "method": Key(str, "auto", "auto | exhaustive | held-karp"),
    "plans": Key(str, None, "plans CSV to score"),
    "orderings": Key(str, None, "orderings CSV to score"),
    "per_class": Key(lambda s: str(s).lower() in ("1", "true", "yes"), False, "class-averaged accuracy"),
    "full_order": Key(lambda s: str(s).lower() in ("1", "true", "yes"), False, "score endpoints too"),
    "file": Key(str, None, "file to inspect"),
}

COMMANDS: dict[str, list[str]] = {
    "gen": ["seed", "out", "n", "horizon", "num_predicates", "num_actions", "feature_dim", "sigma"],
    "train": ["seed", "data", "out", "loss_csv", "latent_dim", "hidden_dim", "alpha", "lr", "batch",
              "epochs", "ablation", "rollout"],
    "plan": ["seed", "threads", "checkpoint", "data", "out", "policy", "index", "horizon", "beta", "eta",
             "epsilon", "kb"],
    "walkthrough": ["seed", "threads", "checkpoint", "data", "out", "method", "horizon"],
    "eval": ["seed", "plans", "orderings", "data", "out", "horizon", "per_class", "full_order"],
    "inspect": ["file"],
}
REQUIRED = {
    "gen": ["out"],
    "train": ["data", "out"],
    "plan": ["data", "out"],
    "walkthrough": ["checkpoint", "data", "out"],
    "eval": ["out"],
    "inspect": ["file"],
}


def read_config(path: str | Path) -> dict[str, str]:
    """``key=value`` lines; keys may use ``-`` or ``_``. Unknown keys are an error."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        k = k.replace("-", "_")
        if k not in KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {k!r}")
        out[k] = v
    return out


def resolve(command: str, flags: dict[str, Any], config_path: str | None) -> tuple[dict[str, Any], set[str]]:
    """Settings for ``command`` and the keys that were set by flag or file."""
    file_values = read_config(config_path) if config_path else {}
    cfg: dict[str, Any] = {}
    explicit: set[str] = set()
    for k in COMMANDS[command]:
        entry = KEYS[k]
        if flags.get(k) is not None:
            v = flags[k]
        elif k in file_values:
            v = file_values[k]
        else:
            cfg[k] = entry.default
            continue
        explicit.add(k)
        try:
            cfg[k] = entry.type(v) if isinstance(v, str) else v
        except (TypeError, ValueError):
            raise ConfigError(f"bad value for {k}: {v!r}") from None
    missing = [k for k in REQUIRED[command] if cfg.get(k) is None]
    if missing:
        raise ConfigError(f"{command}: missing required setting(s): {', '.join(missing)}")
    return cfg, explicit


def _fmt(v: Any) -> str:
    if isinstance(v, list):
        return ",".join(map(str, v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def config_lines(cfg: dict[str, Any]) -> str:
    return "".join(f"# {k}={_fmt(v)}\n" for k, v in sorted(cfg.items()) if k != "threads")


def _write_csv(path: str | Path, cfg: dict[str, Any], header: Sequence[str], rows: list[Sequence[Any]]) -> None:
    buf = io.StringIO()
    buf.write(config_lines(cfg))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _read_csv(path: str | Path) -> list[dict[str, str]]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from None
    body = [ln for ln in lines if not ln.startswith("#")]
    return list(csv.DictReader(body))


def _ids(text: str) -> list[int]:
    return [int(x) for x in text.split()] if text.strip() else []


def _map(fn: Callable[[int], Any], n: int, threads: int) -> list[Any]:
    # executor.map preserves order, so output never depends on the thread count
    if threads <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


def _ensure_parent(path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)


# -- commands ----------------------------------------------------------------------


def cmd_gen(cfg: dict[str, Any], explicit: set[str]) -> int:
    horizons = cfg["horizon"]
    schema = sample_task(cfg["seed"], cfg["num_predicates"], cfg["num_actions"], (min(horizons),),
                         max_horizon=max(horizons))
    renderer = make_renderer(cfg["seed"], cfg["num_predicates"], cfg["feature_dim"], cfg["sigma"])
    tr, te = make_dataset(schema, renderer, cfg["n"], horizons, cfg["seed"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(tr, out / "train.dds")
    write_dataset(te, out / "test.dds")
    (out / "schema.txt").write_text(config_lines(cfg) + schema_to_text(schema), encoding="utf-8")
    print(f"N={cfg['n']} per horizon, horizons={_fmt(horizons)}, D={tr.feature_dim}, A={tr.num_actions}, "
          f"train={len(tr)}, test={len(te)} -> {out}")
    return EXIT_OK


def cmd_train(cfg: dict[str, Any], explicit: set[str]) -> int:
    data = read_dataset(cfg["data"])
    mc = ModelConfig(
        feature_dim=data.feature_dim,
        latent_dim=cfg["latent_dim"],
        num_actions=data.num_actions,
        hidden_dim=cfg["hidden_dim"],
        alpha=cfg["alpha"],
        horizon=max(data.horizons()),
        rollout=cfg["rollout"],
    )
    tc = TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch"], lr=cfg["lr"], seed=cfg["seed"],
                     ablation=cfg["ablation"])
    ckpt = train(data, mc, tc)
    ckpt.extra = {k: _fmt(v) for k, v in sorted(cfg.items())}
    _ensure_parent(cfg["out"])
    write_checkpoint(ckpt, cfg["out"])
    loss_csv = cfg["loss_csv"] or str(cfg["out"]) + ".loss.csv"
    rows = [[i + 1, repr(a), repr(b), repr(c)]
            for i, (a, b, c) in enumerate(zip(ckpt.loss_history, ckpt.val_history, ckpt.lr_history))]
    _write_csv(loss_csv, cfg, ["epoch", "train_loss", "val_loss", "lr"], rows)
    last = ckpt.loss_history[-1] if ckpt.loss_history else ckpt.initial_loss
    print(f"trained {ckpt.ablation} for {ckpt.epoch} epochs: loss {ckpt.initial_loss:.5g} -> {last:.5g}")
    return EXIT_OK


def _planner_config(cfg: dict[str, Any], horizon: int, uniform: bool) -> PlannerConfig:
    return PlannerConfig(horizon=horizon, max_iterations=cfg["beta"], beam_size=cfg["eta"],
                         epsilon=cfg["epsilon"], branching=cfg["kb"], uniform_proposals=uniform,
                         seed=cfg["seed"])


def cmd_plan(cfg: dict[str, Any], explicit: set[str]) -> int:
    data = read_dataset(cfg["data"])
    policy = cfg["policy"]
    needs_model = policy in ("ddn", "no-P", "no-T", "greedy") or (policy == "retrieval" and cfg["checkpoint"])
    if policy not in ("ddn", "no-P", "no-T", "greedy", "random", "retrieval"):
        raise ConfigError(f"unknown policy {policy!r}")
    if needs_model and not cfg["checkpoint"]:
        raise ConfigError(f"policy {policy} needs a checkpoint")
    model = read_checkpoint(cfg["checkpoint"]).model if needs_model else None
    if model is not None and (model.config.feature_dim, model.config.num_actions) != (data.feature_dim, data.num_actions):
        raise UsageError("checkpoint and dataset dimensions disagree")
    index = None
    if policy == "retrieval":
        if not cfg["index"]:
            raise ConfigError("policy retrieval needs --index")
        index = baselines.build_index(read_dataset(cfg["index"]), model, raw=model is None)
    wanted = set(cfg["horizon"]) if "horizon" in explicit else None
    seqs = [(i, s) for i, s in enumerate(data.sequences) if wanted is None or s.horizon in wanted]

    def run(j: int):
        i, s = seqs[j]
        H, dist = s.horizon, math.nan
        if policy in ("ddn", "no-P"):
            res = plan(s.start, s.goal, model, _planner_config(cfg, H, policy == "no-P"))
            acts, dist = res.actions, res.distance
        elif policy == "greedy":
            res = greedy_rollout(s.start, s.goal, model, H)
            acts, dist = res.actions, res.distance
        elif policy == "no-T":
            acts = baselines.rnn_policy_plan(s.start, s.goal, model, H)
        elif policy == "random":
            acts = baselines.random_plan(H, data.num_actions, make_rng([cfg["seed"], i]))
        else:
            acts = baselines.retrieval_plan(s.start, s.goal, index, H)
        return [i, H, " ".join(map(str, acts)), " ".join(map(str, s.actions.tolist())), repr(float(dist))]

    rows = _map(run, len(seqs), cfg["threads"])
    _ensure_parent(cfg["out"])
    _write_csv(cfg["out"], cfg, ["seq_id", "horizon", "pred", "gt", "terminal_distance"], rows)
    ok = sum(r[2] == r[3] for r in rows)
    print(f"planned {len(rows)} sequences with {policy}: {ok} exact")
    return EXIT_OK


def cmd_walkthrough(cfg: dict[str, Any], explicit: set[str]) -> int:
    data = read_dataset(cfg["data"])
    model = read_checkpoint(cfg["checkpoint"]).model
    wanted = set(cfg["horizon"]) if "horizon" in explicit else None
    seqs = [(i, s) for i, s in enumerate(data.sequences) if wanted is None or s.horizon in wanted]
    # pools are shuffled up front so the result does not depend on threading
    rng = make_rng(cfg["seed"])
    pools = [metrics.shuffle_pool(s.observations, rng) for _, s in seqs]

    def run(j: int):
        i, s = seqs[j]
        pool, truth = pools[j]
        order = walkthrough_plan(pool, model, cfg["method"])
        return [i, len(pool), " ".join(map(str, truth)), " ".join(map(str, order))]

    rows = _map(run, len(seqs), cfg["threads"])
    _ensure_parent(cfg["out"])
    _write_csv(cfg["out"], cfg, ["seq_id", "length", "truth", "order"], rows)
    print(f"ordered {len(rows)} pools")
    return EXIT_OK


def cmd_eval(cfg: dict[str, Any], explicit: set[str]) -> int:
    if bool(cfg["plans"]) == bool(cfg["orderings"]):
        raise ConfigError("eval needs exactly one of --plans or --orderings")
    data = read_dataset(cfg["data"]) if cfg["data"] else None
    report = metrics.EvalReport(seed=cfg["seed"], config={k: _fmt(v) for k, v in cfg.items()})
    if cfg["plans"]:
        recs = _read_csv(cfg["plans"])
        try:
            items = [(int(r["seq_id"]), int(r["horizon"]), _ids(r["pred"]), _ids(r["gt"])) for r in recs]
        except (KeyError, ValueError):
            raise FormatError(f"{cfg['plans']} is not a plans CSV", 0) from None
        if data is not None:
            for sid, _, _, gt in items:
                if sid >= len(data) or gt != data.sequences[sid].actions.tolist():
                    raise ValidationError(f"plans row for sequence {sid} does not match the dataset")
        horizons = cfg["horizon"] if "horizon" in explicit else sorted({h for _, h, _, _ in items})
        for h in horizons:
            sel = [(p, g) for _, hh, p, g in items if hh == h]
            report.rows += metrics.score_plans([p for p, _ in sel], [g for _, g in sel], h, cfg["per_class"])
    else:
        recs = _read_csv(cfg["orderings"])
        try:
            items = [(int(r["length"]) - 1, metrics.relative_order(_ids(r["order"]), _ids(r["truth"]))) for r in recs]
        except (KeyError, ValueError):
            raise FormatError(f"{cfg['orderings']} is not an orderings CSV", 0) from None
        horizons = cfg["horizon"] if "horizon" in explicit else sorted({h for h, _ in items})
        for h in horizons:
            report.rows += metrics.score_orders([b for hh, b in items if hh == h], h, cfg["full_order"])
    _ensure_parent(cfg["out"])
    metrics.write_report(report, cfg["out"])
    for r in report.rows:
        print(f"H={r.horizon} {r.metric}={r.value:.4f} (n={r.n})")
    return EXIT_OK


def cmd_inspect(cfg: dict[str, Any], explicit: set[str]) -> int:
    path = Path(cfg["file"])
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from None
    magic = raw[:4]
    if magic == DDS_MAGIC:
        d = dataset_from_bytes(raw, path.stem)
        print(f"format=DDS1\nversion=1\nfeature_dim={d.feature_dim}\nnum_actions={d.num_actions}\nsequences={len(d)}")
        for h in d.horizons():
            print(f"horizon_{h}={len(d.with_horizon(h))}")
    elif magic == DDN_MAGIC:
        head, body = read_header(raw)
        print("format=DDN1\nversion=1")
        for k, v in head.items():
            print(f"{k}={v}")
        print(f"param_bytes={len(raw) - body}")
    else:
        raise FormatError(f"unrecognized magic {magic!r}", 0)
    return EXIT_OK


HANDLERS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "plan": cmd_plan,
    "walkthrough": cmd_walkthrough,
    "eval": cmd_eval,
    "inspect": cmd_inspect,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddn", description="Latent dynamics planning toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, keys in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value settings file")
        for k in keys:
            entry = KEYS[k]
            flag = "--" + k.replace("_", "-")
            if k == "file":
                p.add_argument("file", nargs="?", default=None, help=entry.help)
            elif entry.type is _int_list:
                p.add_argument(flag, dest=k, default=None, help=entry.help)
            elif k in ("per_class", "full_order"):
                p.add_argument(flag, dest=k, action="store_const", const=True, default=None, help=entry.help)
            else:
                p.add_argument(flag, dest=k, type=entry.type, default=None, help=entry.help)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    flags = {k: v for k, v in vars(args).items() if k in KEYS}
    try:
        cfg, explicit = resolve(args.command, flags, args.config)
        return HANDLERS[args.command](cfg, explicit)
    except (ConfigError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, ValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except DdnError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
