import csv
import json
from pathlib import Path

import numpy as np
import pytest

from sedal.cli import main, read_run_config
from sedal.evaluation import ErReport
from sedal.model import init_model, save_model
from sedal.orchestrator import summarize_rows
from sedal.synth import load_corpus_manifest


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    rc = main(["generate", "--preset", "rare", "--recordings", "2",
               "--seed", "4", "--out", str(out)])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    td = tmp_path_factory.mktemp("sim")
    cfg = {
        "corpus": {"preset": "rare", "n_recordings": 4, "seed": 2,
                   "test_n_recordings": 2, "test_seed": 7002,
                   "recording_len_s": 12.0},
        "systems": [1, 5],
        "seeds": [0],
        "overrides": {"checkpoints": [0.5, 1.0],
                      "training": {"n_hidden": 8, "context": 1,
                                   "max_epochs": 4, "min_epochs": 2}},
    }
    cfg_path = td / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out = td / "out"
    assert main(["simulate", "--config", str(cfg_path), "--out", str(out)]) == 0
    return {"out": out, "cfg_path": cfg_path, "td": td}


def test_generate_writes_corpus(corpus_dir):
    truth = load_corpus_manifest(corpus_dir / "corpus.json")
    assert len(truth.durations) == 2
    for rid in truth.durations:
        assert (corpus_dir / f"{rid}.wav").exists()


def test_generate_is_reproducible(corpus_dir, tmp_path):
    again = tmp_path / "again"
    main(["generate", "--preset", "rare", "--recordings", "2",
          "--seed", "4", "--out", str(again)])
    for f in sorted(corpus_dir.iterdir()):
        assert (again / f.name).read_bytes() == f.read_bytes()


def test_prepare_emits_all_artifacts(corpus_dir, tmp_path, capsys):
    out = tmp_path / "prep"
    assert main(["prepare", "--corpus", str(corpus_dir), "--out", str(out),
                 "--dim", "16"]) == 0
    printed = capsys.readouterr().out.strip()
    truth = load_corpus_manifest(corpus_dir / "corpus.json")
    for rid in truth.durations:
        assert (out / "features" / f"{rid}.lmel").exists()
        assert (out / "embeddings" / f"{rid}.emb").exists()
    manifest = json.loads((out / "embeddings" / "manifest.json").read_text())
    assert manifest["dim"] == 16
    with open(out / "segments.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert printed == str(len(rows))
    assert rows, "no segments emitted"

    again = tmp_path / "prep2"
    main(["prepare", "--corpus", str(corpus_dir), "--out", str(again),
          "--dim", "16"])
    assert (again / "segments.csv").read_bytes() == \
        (out / "segments.csv").read_bytes()


def test_simulate_writes_expected_files(run_dir):
    out = run_dir["out"]
    for name in ("metrics.csv", "runs.csv", "summary.csv",
                 "trace_sys1_seed0.csv", "trace_sys5_seed0.csv"):
        assert (out / name).exists(), name
    with open(out / "metrics.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["system"] for r in rows} == {"1", "5"}
    assert {r["budget_fraction"] for r in rows} == {"0.5", "1.0"}


def test_simulate_is_byte_deterministic(run_dir):
    again = run_dir["td"] / "again"
    assert main(["simulate", "--config", str(run_dir["cfg_path"]),
                 "--out", str(again)]) == 0
    for f in sorted(run_dir["out"].iterdir()):
        assert (again / f.name).read_bytes() == f.read_bytes(), f.name


def test_report_matches_stored_metrics(run_dir, tmp_path):
    out_file = tmp_path / "summary.csv"
    assert main(["report", "--runs", str(run_dir["out"]),
                 "--out", str(out_file)]) == 0

    with open(run_dir["out"] / "metrics.csv", newline="") as fh:
        stored = [{"system": int(r["system"]), "seed": int(r["seed"]),
                   "budget_fraction": float(r["budget_fraction"]),
                   "report": ErReport(s=int(r["S"]), d=int(r["D"]),
                                      i=int(r["I"]), n=int(r["N"]))}
                  for r in csv.DictReader(fh)]
    expected = {(str(r["system"]), repr(r["budget_fraction"])): repr(r["median_er"])
                for r in summarize_rows(stored)}
    with open(out_file, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["system"], row["budget_fraction"])
            assert expected[key] == row["median_er"]
    # the suite's own summary file came from the same rows
    assert out_file.read_bytes() == (run_dir["out"] / "summary.csv").read_bytes()


def test_evaluate_reports_deletions_for_silent_model(corpus_dir, tmp_path, capsys):
    model = init_model(dim=16, n_hidden=4,
                       class_names=list(load_corpus_manifest(
                           corpus_dir / "corpus.json").class_names),
                       context=1, seed=0)
    for name in ("w1", "b1", "wc", "bc", "wa", "ba"):
        getattr(model, name)[:] = 0.0
    model.bc[:] = -5.0
    model_path = tmp_path / "silent.sedm"
    save_model(model, model_path)

    assert main(["evaluate", "--corpus", str(corpus_dir), "--model",
                 str(model_path), "--dim", "16"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "system,seed,budget_fraction,S,D,I,N,ER"
    row = lines[1].split(",")
    s, d, i, n = (int(v) for v in row[3:7])
    assert (s, i) == (0, 0)
    assert d == n  # a silent model deletes every reference


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == 2


def test_missing_required_argument_exits_2():
    with pytest.raises(SystemExit) as err:
        main(["simulate"])
    assert err.value.code == 2


def test_run_config_expands_experiment_names(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"corpus": {}, "experiment": "B", "seeds": [0]}))
    doc = read_run_config(str(p))
    assert doc["systems"] == [1, 5, 6]

    p.write_text(json.dumps({"corpus": {}}))
    with pytest.raises(ValueError):
        read_run_config(str(p))
