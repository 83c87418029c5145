from __future__ import annotations

import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from tiara.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--n-items", "300", "--n-tags", "60", "--d", "8", "--seed", "2", "--out", str(out)]) == 0
    return out


def _files(d: Path) -> dict[str, bytes]:
    return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_synth_is_byte_identical(tmp_path, synth_dir):
    again = tmp_path / "again"
    assert main(["synth", "--n-items", "300", "--n-tags", "60", "--d", "8", "--seed", "2", "--out", str(again)]) == 0
    assert _files(again) == _files(synth_dir)
    assert set(_files(again)) == {"corpus.jsonl", "embeddings.txt", "weights.txt", "scorer.yaml", "synth.yaml", "run.yaml"}


def test_synth_from_config_file(tmp_path):
    conf = tmp_path / "s.yaml"
    conf.write_text("n_items: 1000\nn_tags: 50\nd: 4\nseed: 1\n")
    out = tmp_path / "o"
    assert main(["synth", "--config", str(conf), "--out", str(out)]) == 0
    assert len((out / "corpus.jsonl").read_text().splitlines()) == 1000
    assert yaml.safe_load((out / "synth.yaml").read_text())["n_tags"] == 50


def test_synth_then_validate(tmp_path, synth_dir, capsys):
    code = main(["validate", "--corpus", str(synth_dir / "corpus.jsonl"),
                 "--embeddings", str(synth_dir / "embeddings.txt"), "--out", str(tmp_path)])
    assert code == EXIT_OK
    report = json.loads((tmp_path / "validate.json").read_text())
    assert report["errors"] == []
    assert report["corpus"]["items"] == 300
    assert report["corpus"]["coverage"] == 1.0
    assert report["corpus"]["oov_tags"] == 0
    assert "violations: 0" in capsys.readouterr().out


def test_validate_reports_t_max_and_corrupt_line(tmp_path, capsys):
    wide = [f"tag{chr(97 + i // 26)}{chr(97 + i % 26)}" for i in range(34)]
    lines = [json.dumps({"id": "a", "tags": wide, "features": [1.0]}), "{broken", json.dumps({"id": "b", "tags": ["x"], "features": [2.0]})]
    path = tmp_path / "c.jsonl"
    path.write_text("\n".join(lines) + "\n")
    assert main(["validate", "--corpus", str(path)]) == EXIT_FAIL
    out = capsys.readouterr().out
    assert "corpus.t_max: 34" in out
    assert "line 2:" in out
    assert "violations: 1" in out


def test_validate_needs_input(capsys):
    assert main(["validate"]) == EXIT_USAGE


def test_run_writes_outputs(tmp_path, synth_dir):
    out = tmp_path / "r"
    code = main(["run", "--config", str(synth_dir / "run.yaml"), "--seeds", "3", "--budget", "25",
                 "--n-initial-tags", "20", "--out", str(out)])
    assert code == EXIT_OK
    files = _files(out)
    assert {"config.yaml", "curve.csv", "summary.csv", "tag_scores.csv"} <= set(files)
    assert {f"trial_{s}.jsonl" for s in range(3)} <= set(files)
    with open(out / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["policy"] == "tiara" and rows[0]["n"] == "3"
    echoed = yaml.safe_load(files["config.yaml"])
    assert echoed["budget"] == 25 and "out" not in echoed


def test_run_twice_is_byte_identical(tmp_path, synth_dir):
    for name in ("a", "b"):
        assert main(["run", "--config", str(synth_dir / "run.yaml"), "--seeds", "2", "--budget", "20",
                     "--policy", "ucb", "--param", "alpha=0.5", "--out", str(tmp_path / name)]) == 0
    assert _files(tmp_path / "a") == _files(tmp_path / "b")


def test_unknown_policy_is_usage_error(tmp_path, synth_dir, capsys):
    code = main(["run", "--config", str(synth_dir / "run.yaml"), "--policy", "thompson", "--out", str(tmp_path)])
    assert code == EXIT_USAGE
    err = capsys.readouterr().err
    assert "tiara" in err and "ada-ucb" in err


def test_missing_config_file_fails(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path)]) == EXIT_FAIL


def test_sweep_and_export(tmp_path, synth_dir):
    out = tmp_path / "sw"
    assert main(["sweep", "--config", str(synth_dir / "run.yaml"), "--seeds", "2", "--budget", "15",
                 "--grid", "alpha=[0.01,0.1,1.0]", "--out", str(out)]) == 0
    with open(out / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["alpha"]) for r in rows] == [0.01, 0.1, 1.0]
    ex = tmp_path / "ex"
    assert main(["export-scores", "--config", str(synth_dir / "run.yaml"), "--budget", "15",
                 "--top-k", "5", "--out", str(ex)]) == 0
    with open(ex / "tag_scores.csv") as fh:
        ranks = [int(r["rank"]) for r in csv.DictReader(fh)]
    assert ranks == [1, 2, 3, 4, 5]


def test_console_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "tiara.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("run", "sweep", "export-scores", "serve", "probe", "validate", "synth"):
        assert cmd in res.stdout
