# tcc/test_cli.py
import logging
from pathlib import Path

import pandas as pd
import pytest
import torch

from tcc.cli import _run_assignments, _with_run_paths, build_parser, main
from tcc.config import RunConfig, ablation_preset, apply_overrides, load_run_config
from tcc.conftest import TINY_MODEL
from tcc.data import load_dataset, make_synthetic, save_dataset

TINY_SETS = [f"--set=train.model.{key}={list(value) if isinstance(value, tuple) else value}"
             for key, value in TINY_MODEL.items()] + ["--set=train.batch_size=8"]


@pytest.fixture(autouse=True)
def _single_thread(monkeypatch):
    monkeypatch.delenv("TSTCC_THREADS", raising=False)


@pytest.fixture
def tsd_pair(tmp_path):
    train = save_dataset(make_synthetic(8, 1, 32, 3, 0.2, seed=0), tmp_path / "train.tsd")
    test = save_dataset(make_synthetic(4, 1, 32, 3, 0.2, seed=1), tmp_path / "test.tsd")
    return train, test


def _write_report(run_dir, protocol, seed, accuracy, mf1):
    run_dir.mkdir(parents=True)
    pd.DataFrame([{
        "protocol": protocol, "seed": seed, "labels_fraction": 0.01, "ablation": "full",
        "accuracy": accuracy, "mf1": mf1, "f1_0": mf1, "f1_1": mf1,
    }]).to_csv(run_dir / "report.csv", index=False)
    return run_dir


# ----- convert / inspect -----
def test_convert_and_inspect(tmp_path, capsys):
    csv = tmp_path / "toy.csv"
    csv.write_text("0.1,0.2,0.3,0.4,0\n1,2,3,4,1\n5,6,7,8,-1\n", encoding="utf-8")
    out = tmp_path / "toy.tsd"
    assert main(["convert", str(csv), str(out), "--channels", "1", "--length", "4", "--classes", "2"]) == 0
    printed = capsys.readouterr().out
    assert "3 rows" in printed
    assert "sha256 " in printed
    assert load_dataset(out).labels.tolist() == [0, 1, -1]

    assert main(["inspect", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "N: 3" in printed
    assert "class 0: 1" in printed
    assert "unlabeled: 1" in printed


def test_convert_bad_line_exits_2(tmp_path, caplog):
    csv = tmp_path / "bad.csv"
    csv.write_text("1,2,0\n1,2,0\n1,2,1\n1,2,1\nx,2,0\n", encoding="utf-8")
    with caplog.at_level(logging.ERROR):
        code = main(["convert", str(csv), str(tmp_path / "bad.tsd"), "--channels", "1", "--length", "2", "--classes", "2"])
    assert code == 2
    assert "line 5" in caplog.text


def test_inspect_corrupt_file_exits_2(tmp_path):
    path = tmp_path / "junk.tsd"
    path.write_bytes(b"NOPE" + bytes(40))
    assert main(["inspect", str(path)]) == 2


# ----- synth -----
def test_synth_is_deterministic(tmp_path):
    args = ["--set", "synth.n_per_class=5", "--set", "synth.length=32"]
    assert main(["synth", "--out-dir", str(tmp_path / "a"), *args]) == 0
    assert main(["synth", "--out-dir", str(tmp_path / "b"), *args]) == 0
    for name in ("train.tsd", "test.tsd"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert (tmp_path / "a" / "train.tsd").read_bytes() != (tmp_path / "a" / "test.tsd").read_bytes()
    assert len(load_dataset(tmp_path / "a" / "train.tsd")) == 15


# ----- run -----
def test_dry_run(tsd_pair, tmp_path, capsys):
    train, test = tsd_pair
    out = tmp_path / "run"
    code = main(["run", "tstcc", "--train", str(train), "--test", str(test), "--out", str(out),
                 "--labels-fraction", "0.25", "--dry-run"])
    assert code == 0
    printed = capsys.readouterr().out
    assert "latent_length=4" in printed
    assert "labeled=6" in printed
    assert not out.exists()


def test_dry_run_sweep_checks_every_value(tsd_pair, capsys):
    train, test = tsd_pair
    code = main(["run", "tstcc", "--train", str(train), "--test", str(test), "--dry-run",
                 "--sweep", "train.model.k_fraction=0.1,0.7"])
    assert code == 0
    assert "horizon=2" in capsys.readouterr().out


@pytest.mark.parametrize("argv,code", [
    (["run", "tstcc", "--set", "train.nope=1", "--dry-run"], 1),
    (["run", "tstcc", "--set", "train.epochs=0", "--dry-run"], 1),
    (["run", "tstcc", "--ablation", "everything"], 1),
    (["run", "simclr"], 1),
    (["run", "tstcc", "--dry-run"], 1),
    (["run", "tstcc", "--train", "missing.tsd", "--test", "missing.tsd", "--dry-run"], 2),
    (["run", "catcc", "--config", "missing.yaml"], 1),
])
def test_run_errors(argv, code):
    assert main(argv) == code


def test_run_writes_run_directory(tsd_pair, tmp_path, capsys):
    train, test = tsd_pair
    out = tmp_path / "run"
    code = main(["run", "catcc", "--train", str(train), "--test", str(test), "--out", str(out),
                 "--epochs", "1", "--labels-fraction", "0.25", *TINY_SETS])
    assert code == 0
    assert "catcc seed 0: accuracy" in capsys.readouterr().out
    for name in ("config.snapshot", "phase1.ckpt", "phase4.ckpt", "report.csv", "metrics.csv"):
        assert (out / name).exists(), name

    assert main(["report", str(out)]) == 0
    assert "catcc" in capsys.readouterr().out


def test_numeric_failure_exits_3(tsd_pair, tmp_path, monkeypatch):
    def broken(*args, **kwargs):
        nan = torch.tensor(float("nan"))
        return {"loss": nan, "tc_s": nan, "tc_w": nan, "cc": nan}

    monkeypatch.setattr("tcc.pipeline.contrastive_loss_terms", broken)
    train, test = tsd_pair
    code = main(["run", "tstcc", "--train", str(train), "--test", str(test), "--out", str(tmp_path / "run"),
                 "--epochs", "1", *TINY_SETS])
    assert code == 3


# ----- report -----
def test_report_single_run_has_zero_std(tmp_path, capsys):
    run = _write_report(tmp_path / "r0", "tstcc", 0, 0.8125, 0.75)
    out = tmp_path / "summary.csv"
    assert main(["report", str(run), "--out", str(out)]) == 0
    summary = pd.read_csv(out, dtype=str)
    assert summary.loc[0, "runs"] == "1"
    assert summary.loc[0, "accuracy_mean"] == "81.2"
    assert summary.loc[0, "mf1_std"] == "0.0"


def test_report_mean_and_std(tmp_path):
    runs = [_write_report(tmp_path / f"r{i}", "catcc", i, acc, acc) for i, acc in enumerate([0.7, 0.8, 0.9])]
    out = tmp_path / "summary.csv"
    assert main(["report", *map(str, runs), "--out", str(out)]) == 0
    summary = pd.read_csv(out, dtype=str)
    assert summary.loc[0, "accuracy_mean"] == "80.0"
    assert summary.loc[0, "accuracy_std"] == "10.0"


def test_report_mixed_protocols_need_group(tmp_path):
    a = _write_report(tmp_path / "a", "tstcc", 0, 0.8, 0.8)
    b = _write_report(tmp_path / "b", "catcc", 0, 0.9, 0.9)
    assert main(["report", str(a), str(b)]) == 1
    assert main(["report", str(a), str(b), "--group"]) == 0
    assert main(["report", str(tmp_path / "nothing")]) == 2


# ----- help -----
def test_help_lists_defaults(capsys):
    assert main(["run", "--help"]) == 0
    text = " ".join(capsys.readouterr().out.split())
    assert "lr 3e-4" in text
    assert "tau 0.2" in text


def test_flags_override_set_and_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("train:\n  seed: 1\n  epochs: 5\n", encoding="utf-8")
    args = build_parser().parse_args(["run", "tstcc", "--config", str(path), "--set", "train.seed=2",
                                      "--seed", "3", "--ablation", "tc_only"])
    cfg = apply_overrides(apply_overrides(load_run_config(args.config), args.set), _run_assignments(args))
    assert (cfg.train.seed, cfg.train.epochs) == (3, 5)
    assert cfg.train.ablation == ablation_preset("tc_only")
    assert RunConfig().train.ablation != cfg.train.ablation


def test_path_flags_stay_paths():
    args = build_parser().parse_args(["run", "tstcc", "--train", "on", "--test", "123", "--out", "a: b"])
    cfg = _with_run_paths(apply_overrides(RunConfig(), _run_assignments(args)), args)
    assert cfg.data.train_path == Path("on")
    assert cfg.data.test_path == Path("123")
    assert cfg.data.output_dir == Path("a: b")


def test_bad_thread_env_exits_1(tsd_pair, monkeypatch):
    monkeypatch.setenv("TSTCC_THREADS", "lots")
    train, test = tsd_pair
    assert main(["run", "tstcc", "--train", str(train), "--test", str(test), "--dry-run"]) == 1
