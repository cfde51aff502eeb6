from __future__ import annotations

import csv
import subprocess
import sys

import pytest

from ddn.cli import main
from ddn.dataset import read_dataset
from ddn.metrics import read_report
from ddn.training import read_checkpoint

SMALL = ["--latent-dim", "8", "--hidden-dim", "8", "--epochs", "2", "--batch", "16", "--lr", "1e-3"]


def rerun_identical(argv, *paths) -> None:
    """Run ``argv`` twice and check every output file is byte-identical."""
    assert main(argv) == 0
    first = [p.read_bytes() for p in paths]
    assert main(argv) == 0
    assert [p.read_bytes() for p in paths] == first


def rows(path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen", "--out", str(d / "data"), "--n", "20", "--horizon", "3,4", "--seed", "1"]) == 0
    assert main(["train", "--data", str(d / "data/train.dds"), "--out", str(d / "m.ddn"), "--seed", "1", *SMALL]) == 0
    return d


def test_gen_writes_files_and_is_reproducible(work):
    train = read_dataset(work / "data/train.dds")
    assert train.horizons() == [3, 4] and len(train) == 28
    assert len(read_dataset(work / "data/test.dds")) == 12
    d = work / "data"
    rerun_identical(["gen", "--out", str(d), "--n", "20", "--horizon", "3,4", "--seed", "1"],
                    d / "train.dds", d / "test.dds", d / "schema.txt")


def test_train_is_reproducible_and_logs_each_epoch(work, tmp_path):
    out = tmp_path / "m.ddn"
    rerun_identical(["train", "--data", str(work / "data/train.dds"), "--out", str(out), "--seed", "1", *SMALL],
                    out, tmp_path / "m.ddn.loss.csv")
    log = rows(tmp_path / "m.ddn.loss.csv")
    assert [r["epoch"] for r in log] == ["1", "2"]
    assert read_checkpoint(out).extra["epochs"] == "2"


def test_plan_and_eval_are_reproducible(work, tmp_path):
    out = tmp_path / "a.csv"
    args = ["plan", "--checkpoint", str(work / "m.ddn"), "--data", str(work / "data/test.dds"), "--out", str(out)]
    rerun_identical(args, out)
    first = out.read_bytes()
    assert main([*args, "--threads", "3"]) == 0
    assert out.read_bytes() == first
    plans = rows(out)
    assert len(plans) == 12 and {r["horizon"] for r in plans} == {"3", "4"}
    report_path = tmp_path / "r.csv"
    rerun_identical(["eval", "--plans", str(out), "--data", str(work / "data/test.dds"), "--out", str(report_path)],
                    report_path)
    report = read_report(report_path)
    assert report.horizons() == [3, 4] and len(report.rows) == 6


def test_minimal_beam_matches_greedy_policy(work, tmp_path):
    base = ["plan", "--checkpoint", str(work / "m.ddn"), "--data", str(work / "data/test.dds")]
    assert main([*base, "--eta", "1", "--kb", "1", "--beta", "3", "--horizon", "3", "--out", str(tmp_path / "b.csv")]) == 0
    assert main([*base, "--policy", "greedy", "--horizon", "3", "--out", str(tmp_path / "g.csv")]) == 0
    assert [r["pred"] for r in rows(tmp_path / "b.csv")] == [r["pred"] for r in rows(tmp_path / "g.csv")]


def test_baseline_policies(work, tmp_path):
    data = str(work / "data/test.dds")
    assert main(["plan", "--policy", "random", "--data", data, "--out", str(tmp_path / "r.csv")]) == 0
    assert all(len(r["pred"].split()) == int(r["horizon"]) for r in rows(tmp_path / "r.csv"))
    assert main(["plan", "--policy", "retrieval", "--index", str(work / "data/train.dds"), "--data", data,
                 "--out", str(tmp_path / "k.csv")]) == 0
    assert main(["plan", "--policy", "no-T", "--checkpoint", str(work / "m.ddn"), "--data", data,
                 "--out", str(tmp_path / "t.csv")]) == 0
    assert main(["plan", "--policy", "ddn", "--data", data, "--out", str(tmp_path / "x.csv")]) == 2


def test_eval_sweep_reports_every_requested_horizon(work, tmp_path):
    plans = tmp_path / "p.csv"
    assert main(["plan", "--policy", "random", "--data", str(work / "data/test.dds"), "--out", str(plans)]) == 0
    assert main(["eval", "--plans", str(plans), "--horizon", "3,4,5,6", "--out", str(tmp_path / "e.csv")]) == 0
    report = read_report(tmp_path / "e.csv")
    assert report.horizons() == [3, 4, 5, 6]
    assert [r.n for r in report.rows if r.horizon == 6] == [0, 0, 0]


def test_walkthrough_and_order_eval(work, tmp_path):
    out = tmp_path / "w.csv"
    args = ["walkthrough", "--checkpoint", str(work / "m.ddn"), "--data", str(work / "data/test.dds")]
    rerun_identical([*args, "--out", str(out)], out)
    first = out.read_bytes()
    assert main([*args, "--out", str(out), "--threads", "2"]) == 0
    assert out.read_bytes() == first
    for r in rows(out):
        order = [int(x) for x in r["order"].split()]
        assert order[0] == 0 and order[-1] == int(r["length"]) - 1
    assert main(["eval", "--orderings", str(out), "--out", str(tmp_path / "e.csv")]) == 0
    report = read_report(tmp_path / "e.csv")
    assert {r.metric for r in report.rows} == {"hamming", "pairwise_acc"}


def test_config_file_and_flag_precedence(work, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# comment\npolicy = random\nseed=4\n")
    data = str(work / "data/test.dds")
    assert main(["plan", "--config", str(cfg), "--data", data, "--out", str(tmp_path / "a.csv")]) == 0
    text = (tmp_path / "a.csv").read_text()
    assert "# policy=random\n" in text and "# seed=4\n" in text
    assert main(["plan", "--config", str(cfg), "--seed", "5", "--data", data, "--out", str(tmp_path / "b.csv")]) == 0
    assert "# seed=5\n" in (tmp_path / "b.csv").read_text()


def test_exit_codes(work, tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour=blue\n")
    assert main(["plan", "--config", str(bad), "--data", "x", "--out", "y"]) == 2
    assert main(["gen", "--out", str(tmp_path / "g"), "--n", "5"]) == 2
    assert main(["train", "--out", "x"]) == 2
    assert main(["nonsense"]) == 2
    corrupt = tmp_path / "c.dds"
    raw = bytearray((work / "data/test.dds").read_bytes())
    raw[0] = ord("Z")
    corrupt.write_bytes(bytes(raw))
    assert main(["inspect", str(corrupt)]) == 3
    assert main(["plan", "--policy", "random", "--data", str(corrupt), "--out", str(tmp_path / "p.csv")]) == 3


def test_corrupt_file_error_names_offset(work, tmp_path, capsys):
    corrupt = tmp_path / "m.ddn"
    raw = bytearray((work / "m.ddn").read_bytes())
    raw[1] = 0
    corrupt.write_bytes(bytes(raw))
    assert main(["inspect", str(corrupt)]) == 3
    assert "byte offset 0" in capsys.readouterr().err


def test_inspect_reports_headers(work, capsys):
    assert main(["inspect", str(work / "data/train.dds")]) == 0
    out = capsys.readouterr().out
    assert "format=DDS1" in out and "horizon_3=14" in out
    assert main(["inspect", str(work / "m.ddn")]) == 0
    assert "latent_dim=8" in capsys.readouterr().out


def test_console_script_entry_point(work):
    proc = subprocess.run([sys.executable, "-m", "ddn.cli", "inspect", str(work / "m.ddn")],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "format=DDN1" in proc.stdout
