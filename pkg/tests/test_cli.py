import json
import subprocess
import sys

import pytest

from hremrg.cli import main


def run(*argv):
    return main([str(a) for a in argv])


def test_usage_errors_exit_1(tmp_path, capsys):
    assert run("frobnicate") == 1
    assert run("score") == 1
    assert run("search-weights", "--table", "builtin", "--metrics", "BLEU-9", "--out", tmp_path) == 1
    (tmp_path / "c.txt").write_text("colour = blue\n")
    assert run("--config", tmp_path / "c.txt", "make-toy", "--out", tmp_path / "t") == 1
    assert "colour" in capsys.readouterr().err


def test_data_errors_exit_2(tmp_path, capsys):
    assert run("build-vocab", "--manifest", tmp_path / "missing.jsonl", "--out", tmp_path) == 2
    (tmp_path / "m.jsonl").write_text('{"id": 1}\n')
    assert run("build-vocab", "--manifest", tmp_path / "m.jsonl", "--out", tmp_path) == 2
    assert "error" in capsys.readouterr().err


def test_make_toy_and_vocab(tmp_path):
    assert run("--seed", 3, "--out", tmp_path / "c", "make-toy", "--examples", 12) == 0
    (tmp_path / "cfg").write_text("min_count = 1\n")
    assert run("--config", tmp_path / "cfg", "--out", tmp_path / "r", "build-vocab",
               "--manifest", tmp_path / "c" / "manifest.jsonl") == 0
    lines = (tmp_path / "r" / "vocab.txt").read_text().splitlines()
    assert lines[0] == "# min_count=1" and len(lines) > 1


def test_flags_after_subcommand(tmp_path):
    assert run("make-toy", "--out", tmp_path / "c", "--seed", 1, "--examples", 3) == 0
    assert (tmp_path / "c" / "manifest.jsonl").exists()


def test_search_weights_lookup(tmp_path, capsys):
    assert run("--out", tmp_path, "search-weights", "--table", "builtin", "--metrics", "BLEU-4,CIDEr,METEOR",
               "--grid") == 0
    assert capsys.readouterr().out.strip() == "0:0:0:1:1:2:0"
    report = json.loads((tmp_path / "search.json").read_text())
    assert report["weights"] == "0:0:0:1:1:2:0"
    assert report["greedy"]["best"]["score"] == 2.0833
    assert report["greedy"]["unique_evaluations"] <= 8
    assert report["grid"]["unique_evaluations"] == 27 and report["budget"] == 12


def test_search_weights_missing_table_row(tmp_path):
    (tmp_path / "t.csv").write_text("weights,score\n1:1:0:0:0:0:0,1.0\n")
    assert run("--out", tmp_path, "search-weights", "--table", tmp_path / "t.csv") == 2
    partial = json.loads((tmp_path / "search_partial.json").read_text())
    assert partial["unique_evaluations"] == 1


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "hremrg.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("make-toy", "build-vocab", "pretrain", "scst", "search-weights", "generate", "score"):
        assert cmd in out.stdout
