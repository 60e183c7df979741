import csv
import json
import subprocess
import sys
import time

import pytest

from frwkv import cli
from frwkv.errors import DivergenceError
from frwkv.harness import RecordStore, average_ranks, winner_counts

TOY_MODEL = """
[model]
variant = FRWKVPlus
seq_len = 24
horizon = 6
dim = 4
hidden = 8
heads = 1
layers = 1
ffn_dim = 8
period = 12
routers = 2
alpha_init = 0.1
trust_bias_init = -2.0

[train]
lr = 3e-3
epochs = 3
patience = 2
"""


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("FRWKV_OUTPUT_ROOT", str(tmp_path / "runs"))
    assert cli.main(["synth", "--out", "syn.csv", "--vars", "2", "--len", "400", "--period", "12",
                     "--noise", "0.2", "--seed", "0"]) == 0
    return tmp_path


def write_config(path, data="syn.csv", out="out", extra=""):
    path.write_text(f"[data]\npath = {data}\nkind = ratio\n{TOY_MODEL}\n[run]\nseed = 7\n"
                    f"output_dir = {out}\n{extra}")
    return path


def test_train_writes_artifacts(workdir, capsys):
    cfg = write_config(workdir / "toy.ini")
    start = time.perf_counter()
    assert cli.main(["train", "--config", str(cfg)]) == 0
    assert time.perf_counter() - start < 60
    out = workdir / "out"
    for name in ("model.ckpt", "train_log.csv", "metrics.json", "config.resolved.ini"):
        assert (out / name).exists(), name
    rows = list(csv.DictReader((out / "train_log.csv").open()))
    assert list(rows[0]) == ["epoch", "lr", "train_loss", "val_loss", "stopped"]
    metrics = json.loads((out / "metrics.json").read_text())
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert printed["mse"] == metrics["mse"] and printed["mae"] == metrics["mae"]


def test_resolved_config_reproduces(workdir):
    cfg = write_config(workdir / "toy.ini")
    assert cli.main(["train", "--config", str(cfg)]) == 0
    resolved = (workdir / "out" / "config.resolved.ini").read_text()
    for key in ("weight_decay", "fft_method", "projection", "n_vars", "seed"):
        assert key in resolved
    assert cli.main(["train", "--config", str(workdir / "out" / "config.resolved.ini"), "--out", "again"]) == 0
    first = json.loads((workdir / "out" / "metrics.json").read_text())
    second = json.loads((workdir / "again" / "metrics.json").read_text())
    assert first["mse"] == second["mse"] and first["mae"] == second["mae"]
    assert (workdir / "again" / "config.resolved.ini").read_text() == resolved


def test_eval_reproduces_and_exports(workdir, capsys):
    cfg = write_config(workdir / "toy.ini")
    assert cli.main(["train", "--config", str(cfg)]) == 0
    metrics = json.loads((workdir / "out" / "metrics.json").read_text())
    capsys.readouterr()
    assert cli.main(["eval", "--ckpt", "out/model.ckpt", "--data", "syn.csv", "--split", "test",
                     "--export-preds", "preds.csv"]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["mse"] == metrics["mse"] and result["mae"] == metrics["mae"]
    lines = (workdir / "preds.csv").read_text().splitlines()
    assert len(lines) - 1 == result["windows"]
    assert len(lines[0].split(",")) == 1 + 2 * 6 * 2


def test_eval_wrong_variable_count(workdir):
    write_config(workdir / "toy.ini")
    assert cli.main(["train", "--config", "toy.ini"]) == 0
    assert cli.main(["synth", "--out", "three.csv", "--vars", "3", "--len", "400"]) == 0
    assert cli.main(["eval", "--ckpt", "out/model.ckpt", "--data", "three.csv"]) == 2


@pytest.mark.parametrize("text", [
    "[data]\npath = missing.csv\n",
    "[model]\nbogus = 1\n[data]\npath = syn.csv\n",
    "[weird]\nx = 1\n",
    "[train]\nlr = fast\n[data]\npath = syn.csv\n",
    "[model]\nheads = 3\n[data]\npath = syn.csv\n",
])
def test_config_errors_exit_2(workdir, text, capsys):
    (workdir / "bad.ini").write_text(text)
    assert cli.main(["train", "--config", "bad.ini"]) == 2
    assert "error:" in capsys.readouterr().err


def test_missing_config_and_checkpoint(workdir):
    assert cli.main(["train", "--config", "nope.ini"]) == 2
    assert cli.main(["eval", "--ckpt", "nope.ckpt", "--data", "syn.csv"]) == 2
    assert cli.main(["report", "--store", "nope.jsonl", "--out", "r"]) == 2


def test_divergence_exit_3(workdir, monkeypatch):
    def boom(*a, **k):
        raise DivergenceError("non-finite training loss at epoch 0")

    monkeypatch.setattr(cli, "fit", boom)
    assert cli.main(["train", "--config", str(write_config(workdir / "toy.ini"))]) == 3


def test_default_output_dir_uses_env_root(workdir):
    write_config(workdir / "toy.ini", out="")
    assert cli.main(["train", "--config", "toy.ini"]) == 0
    assert (workdir / "runs" / "syn_6_FRWKVPlus_7" / "metrics.json").exists()


GRID = """
[grid]
datasets = syn.csv, syn2.csv
horizons = 6
variants = FRWKVPlus, CrossBranchGate
seeds = 1-2
store = ab/records.jsonl
report_dir = ab/report
""" + TOY_MODEL.replace("epochs = 3", "epochs = 1").replace("variant = FRWKVPlus\n", "")


def test_ablate_grid_resume_and_report(workdir, capsys):
    assert cli.main(["synth", "--out", "syn2.csv", "--vars", "2", "--len", "400", "--seed", "1"]) == 0
    (workdir / "grid.ini").write_text(GRID)
    assert cli.main(["ablate", "--grid", "grid.ini"]) == 0
    store = RecordStore(workdir / "ab" / "records.jsonl")
    recs = store.records()
    assert len(recs) == 8 and {r.variant for r in recs} == {"FRWKVPlus", "CrossBranchGate"}
    capsys.readouterr()

    lines = store.path.read_text().splitlines()
    store.path.write_text("\n".join(lines[:-2]) + "\n")  # simulate an interrupted run
    assert cli.main(["ablate", "--grid", "grid.ini", "--workers", "1"]) == 0
    summary = json.loads(capsys.readouterr().out.splitlines()[0])
    assert summary["trained"] == 2 and summary["records"] == 8

    assert cli.main(["report", "--store", str(store.path), "--out", "rep"]) == 0
    rows = list(csv.DictReader((workdir / "rep" / "summary.csv").open()))
    wins, ranks = winner_counts(store.records()), average_ranks(store.records())
    for row in rows:
        assert float(row["mse_wins"]) == wins[row["variant"]]
        assert float(row["mse_avg_rank"]) == ranks[row["variant"]]
    assert (workdir / "ab" / "report" / "report.txt").exists()


def test_module_entry_point(workdir):
    out = subprocess.run([sys.executable, "-m", "frwkv", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "ablate" in out.stdout
    out = subprocess.run([sys.executable, "-m", "frwkv", "train"], capture_output=True, text=True)
    assert out.returncode == 2
