import json
import subprocess
import sys

import numpy as np
import pytest

from lmolab.cli import main
from lmolab.harness import RECORD_HEADER

SMALL = {
    "model": {"dim": 32, "layers": 1, "heads": 2, "seq_len": 32},
    "corpus": {"tokens": 20000, "block_len": 33, "alphabet": 16, "transition_seed": 1},
    "pretrain_corpus": {"tokens": 20000, "block_len": 33, "alphabet": 16, "transition_seed": 1},
    "steps": 20,
    "eval_interval": 10,
    "batch_size": 8,
    "eval_batches": 2,
    "lr": 0.01,
}


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def test_verify_norms(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", {"trials": 20, "oracle_matrices": 20})
    assert main(["verify-norms", "--config", cfg, "--out", str(tmp_path)]) == 0
    out = json.loads((tmp_path / "verify_norms.json").read_text())
    assert out["inequality_violations"] == 0


def test_pretrain_sft_pareto_probe(tmp_path):
    cfg = write(tmp_path / "c.json", SMALL)
    pre = tmp_path / "pre"
    assert main(["pretrain", "--config", cfg, "--out", str(pre), "--seed", "1"]) == 0
    assert (pre / "pretrain.lmol").exists()
    sft_conf = dict(SMALL, corpus=dict(SMALL["corpus"], transition_seed=2))
    cfg2 = write(tmp_path / "s.json", sft_conf)
    sft = tmp_path / "sft"
    assert main(["sft", "--config", cfg2, "--init", str(pre / "pretrain.lmol"), "--algo", "sign",
                 "--out", str(sft)]) == 0
    lines = (sft / "records.csv").read_text().splitlines()
    assert lines[0] == ",".join(RECORD_HEADER)
    assert len(lines) == 1 + 3
    assert main(["pareto", "--records", str(sft / "records.csv"), "--out", str(tmp_path / "p")]) == 0
    assert (tmp_path / "p" / "frontier.csv").exists()
    assert main(["probe-acts", "--config", cfg, "--checkpoint", str(pre / "pretrain.lmol"),
                 "--out", str(tmp_path / "probe")]) == 0
    rep = json.loads((tmp_path / "probe" / "probe.json").read_text())
    assert rep["mean_stable_rank"] >= 1


def test_grid(tmp_path):
    conf = dict(SMALL, lrs=[0.001, 0.01], algos=["sign", "orth"], steps=10)
    cfg = write(tmp_path / "g.json", conf)
    assert main(["grid", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "records.csv").read_text().splitlines()[1:]
    assert len(rows) == 4 * 2
    assert len((tmp_path / "frontier.csv").read_text().splitlines()) >= 2


def test_corrupt_and_eval_mem(tmp_path):
    cfg = write(tmp_path / "c.json", dict(SMALL, corpus={"tokens": 4000, "block_len": 33, "alphabet": 16},
                                           alpha=0.5, subset=20, a=8, b=2))
    assert main(["corrupt", "--config", cfg, "--out", str(tmp_path)]) == 0
    table = json.loads((tmp_path / "corpus.bin.blocks.json").read_text())
    assert len(table["blocks"]) == 4000 // 33
    assert main(["pretrain", "--config", write(tmp_path / "p.json", SMALL), "--out", str(tmp_path)]) == 0
    assert main(["eval-mem", "--config", cfg, "--checkpoint", str(tmp_path / "pretrain.lmol"),
                 "--corpus", str(tmp_path / "corpus.bin"), "--split", "all", "--out", str(tmp_path)]) == 0
    res = json.loads((tmp_path / "memorization.json").read_text())
    assert 0.0 <= res["accuracy"] <= 1.0


def test_forgetting_sim(tmp_path):
    cfg = write(tmp_path / "c.json", {"alpha1": [1], "n": 8, "m": 8, "instances": 5})
    assert main(["forgetting-sim", "--config", cfg, "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "forgetting_summary.json").read_text())
    assert summary["1"]["instances"] == 5
    assert (tmp_path / "forgetting_alpha1.csv").exists()


def test_exit_code_validation(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", dict(SMALL, corpus={"generator": "template", "grammar": "nope"}))
    assert main(["pretrain", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert main(["sft", "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_exit_code_bad_json(tmp_path):
    (tmp_path / "bad.json").write_text("{")
    assert main(["pretrain", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path)]) == 2


def test_exit_code_runtime(tmp_path):
    (tmp_path / "r.csv").write_text("not,a,records,file\n")
    # a malformed records file is rejected as invalid input
    assert main(["pareto", "--records", str(tmp_path / "r.csv"), "--out", str(tmp_path)]) == 2
    assert main(["pareto", "--records", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == 1


def test_console_entry_point_help():
    out = subprocess.run([sys.executable, "-m", "lmolab.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("verify-norms", "pretrain", "sft", "grid", "pareto", "corrupt", "eval-mem", "probe-acts",
                "forgetting-sim"):
        assert cmd in out.stdout


def test_unknown_subcommand_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
