"""Command-line workflows: prepare, train, sample, optimize, eval."""

import csv
import json
import subprocess
import sys

import pytest

from cdrgen.cli import main
from cdrgen.structure import ComplexInstance, parse_pdb
from cdrgen.synthetic import write_toy_corpus


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    manifest = write_toy_corpus(root, count=2, seed=0)
    return manifest


@pytest.fixture(scope="module")
def prepared(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("prepared")
    assert main(["prepare", "--manifest", str(corpus), "--out", str(out)]) == 0
    return out


def run_config(prepared, out_dir, **overrides):
    doc = {
        "manifest": str(prepared / "prepared.json"),
        "out_dir": str(out_dir),
        "seed": 9,
        "checkpoint_every": 3,
        "model": {
            "features": {
                "residue_width": 16,
                "pair_width": 16,
                "atom_width": 8,
                "type_embed_width": 4,
                "time_embed_width": 4,
                "k_neighbors": 8,
                "atom_rbf_count": 8,
                "pair_rbf_count": 8,
            },
            "vismp_blocks": 1,
            "ipa_blocks": 1,
            "ipa_heads": 2,
            "ipa_channel": 4,
            "ipa_points": 2,
            "pos_blocks": 1,
            "pos_readout": 2,
        },
        "optimizer": {
            "learning_rate": 2e-3,
            "train_steps": 6,
            "t_batch": 1,
        },
    }
    doc.update(overrides)
    return doc


def write_config(path, doc):
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return str(path)


@pytest.fixture(scope="module")
def trained(prepared, tmp_path_factory):
    """A completed training run directory with checkpoints."""
    root = tmp_path_factory.mktemp("trainrun")
    out = root / "run"
    config = write_config(root / "config.json", run_config(prepared, out))
    assert main(["train", "--config", config]) == 0
    return out


def read_error(capsys) -> dict:
    err = capsys.readouterr().err.strip().splitlines()[-1]
    return json.loads(err)


# -- prepare -------------------------------------------------------------------


def test_prepare_outputs(prepared):
    index = json.loads((prepared / "prepared.json").read_text())
    assert [e["id"] for e in index["instances"]] == ["toy00", "toy01"]
    assert index["failures"] == []
    for entry in index["instances"]:
        instance = ComplexInstance.load(prepared / entry["path"])
        assert instance.complex_id == entry["id"]


def test_prepare_missing_entry_reported(corpus, tmp_path, capsys):
    doc = json.loads(corpus.read_text())
    doc[0] = dict(doc[0], path="gone.pdb")
    broken = corpus.parent / "broken.json"
    broken.write_text(json.dumps(doc))
    out = tmp_path / "out"
    assert main(["prepare", "--manifest", str(broken), "--out", str(out)]) == 0
    index = json.loads((out / "prepared.json").read_text())
    assert [f["id"] for f in index["failures"]] == ["toy00"]
    assert [e["id"] for e in index["instances"]] == ["toy01"]


def test_prepare_empty_manifest_fails(tmp_path, capsys):
    empty = tmp_path / "empty.json"
    empty.write_text("[]")
    code = main(["prepare", "--manifest", str(empty),
                 "--out", str(tmp_path / "out")])
    assert code == 1
    payload = read_error(capsys)
    assert payload["error"] == "CommandError"
    assert "non-empty" in payload["message"]


def test_prepare_rerun_byte_identical(corpus, tmp_path):
    first = tmp_path / "a"
    second = tmp_path / "b"
    for out in (first, second):
        assert main(["prepare", "--manifest", str(corpus),
                     "--out", str(out)]) == 0
    for name in ("prepared.json", "toy00.instance.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


# -- train ---------------------------------------------------------------------


def test_train_artifacts(trained):
    assert (trained / "config.json").exists()
    with open(trained / "loss.csv", newline="") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["step", "L_type", "L_pos", "L_ori", "total"]
    assert len(rows) == 7
    assert [r[0] for r in rows[1:]] == [str(k) for k in range(1, 7)]
    for name in ("checkpoint_step_000003.ckpt", "checkpoint_step_000006.ckpt",
                 "checkpoint_final.ckpt"):
        assert (trained / name).exists()


def test_train_rerun_byte_identical(prepared, tmp_path):
    out = tmp_path / "run"
    config = write_config(tmp_path / "config.json",
                          run_config(prepared, out))
    assert main(["train", "--config", config]) == 0
    loss_first = (out / "loss.csv").read_bytes()
    final_first = (out / "checkpoint_final.ckpt").read_bytes()
    assert main(["train", "--config", config]) == 0
    assert (out / "loss.csv").read_bytes() == loss_first
    assert (out / "checkpoint_final.ckpt").read_bytes() == final_first


def test_train_resume_reproduces_run(prepared, trained, tmp_path):
    out = tmp_path / "resumed"
    config = write_config(tmp_path / "config.json",
                          run_config(prepared, out))
    code = main(["train", "--config", config,
                 "--resume", str(trained / "checkpoint_step_000003.ckpt")])
    assert code == 0
    original = (trained / "loss.csv").read_text().splitlines()
    resumed = (out / "loss.csv").read_text().splitlines()
    assert resumed[1:] == original[4:]
    assert (out / "checkpoint_final.ckpt").read_bytes() == \
        (trained / "checkpoint_final.ckpt").read_bytes()


def test_train_resume_beyond_budget_fails(prepared, trained, tmp_path, capsys):
    config = write_config(
        tmp_path / "config.json",
        run_config(prepared, tmp_path / "run"),
    )
    code = main(["train", "--config", config,
                 "--resume", str(trained / "checkpoint_final.ckpt")])
    assert code == 1
    assert "already has" in read_error(capsys)["message"]


def test_train_non_finite_abort(prepared, tmp_path, capsys):
    import numpy as np

    out = tmp_path / "run"
    doc = run_config(prepared, out)
    doc["optimizer"]["learning_rate"] = 1e8
    doc["optimizer"]["train_steps"] = 50
    config = write_config(tmp_path / "config.json", doc)
    with np.errstate(all="ignore"):
        code = main(["train", "--config", config])
    assert code == 1
    payload = read_error(capsys)
    assert payload["error"] == "CommandError"
    diagnostic = json.loads((out / "diagnostic.json").read_text())
    assert diagnostic["step"] >= 1
    assert diagnostic["batch"][0]["complex"] in ("toy00", "toy01")


# -- sample / optimize -----------------------------------------------------------


def test_sample_writes_designs(trained, capsys):
    code = main(["sample", "--checkpoint",
                 str(trained / "checkpoint_final.ckpt"), "--count", "2"])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["designs"] == 4
    samples = trained / "samples"
    for complex_id in ("toy00", "toy01"):
        for k in range(2):
            doc = json.loads(
                (samples / complex_id / f"design_{k:03d}.json").read_text()
            )
            assert doc["complex_id"] == complex_id
            assert len(doc["sequence"]) == len(doc["ca"])
            pdb_text = (samples / complex_id / f"design_{k:03d}.pdb")
            parsed = parse_pdb(pdb_text.read_text())
            assert parsed.records
    with open(samples / "metrics.csv", newline="") as handle:
        rows = list(csv.reader(handle))
    assert len(rows) == 6  # header, four designs, aggregate
    assert rows[-1][0] == "aggregate_mean"


def test_sample_rerun_byte_identical(trained, tmp_path):
    first = tmp_path / "s1"
    second = tmp_path / "s2"
    for out in (first, second):
        assert main(["sample", "--checkpoint",
                     str(trained / "checkpoint_final.ckpt"),
                     "--count", "1", "--out", str(out)]) == 0
    assert (first / "metrics.csv").read_bytes() == \
        (second / "metrics.csv").read_bytes()
    assert (first / "toy00" / "design_000.json").read_bytes() == \
        (second / "toy00" / "design_000.json").read_bytes()


def test_sample_split_filter(trained, tmp_path, capsys):
    out = tmp_path / "test_only"
    code = main(["sample", "--checkpoint",
                 str(trained / "checkpoint_final.ckpt"),
                 "--count", "1", "--out", str(out), "--split", "test"])
    assert code == 0
    capsys.readouterr()
    assert not (out / "toy00").exists()
    assert (out / "toy01" / "design_000.json").exists()


def test_sample_bad_count(trained, capsys):
    code = main(["sample", "--checkpoint",
                 str(trained / "checkpoint_final.ckpt"), "--count", "0"])
    assert code == 1
    assert "count" in read_error(capsys)["message"]


def test_checkpoint_config_mismatch_names_parameter(
        prepared, trained, tmp_path, capsys):
    doc = run_config(prepared, tmp_path / "other")
    doc["model"]["ipa_heads"] = 4
    config = write_config(tmp_path / "bad.json", doc)
    code = main(["sample", "--checkpoint",
                 str(trained / "checkpoint_final.ckpt"),
                 "--count", "1", "--config", config,
                 "--out", str(tmp_path / "designs")])
    assert code == 1
    message = read_error(capsys)["message"]
    assert "model.ipa_heads" in message


def test_optimize_writes_designs(trained, capsys):
    code = main(["optimize", "--checkpoint",
                 str(trained / "checkpoint_final.ckpt"),
                 "--steps", "4", "--count", "1"])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["designs"] == 2
    out = trained / "optimized_t4"
    assert (out / "toy00" / "design_000.pdb").exists()
    assert (out / "metrics.csv").exists()


# -- eval ----------------------------------------------------------------------


def test_eval_identity_rows(trained, tmp_path, capsys):
    samples = trained / "samples"
    out_csv = tmp_path / "identity.csv"
    code = main(["eval", "--designs", str(samples),
                 "--references", str(samples), "--out", str(out_csv)])
    assert code == 0
    with open(out_csv, newline="") as handle:
        rows = list(csv.DictReader(handle))
    body = [r for r in rows if r["design_id"] != "aggregate_mean"]
    assert body
    for row in body:
        assert float(row["aar"]) == 100.0
        assert float(row["rmsd"]) == 0.0


def test_eval_against_prepared_references(trained, prepared, capsys):
    samples = trained / "samples"
    code = main(["eval", "--designs", str(samples),
                 "--references", str(prepared)])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["rows"] == 4
    assert summary["skipped"] == []
    assert (samples / "eval_metrics.csv").exists()


def test_eval_empty_designs_fails(tmp_path, capsys):
    designs = tmp_path / "designs"
    designs.mkdir()
    code = main(["eval", "--designs", str(designs),
                 "--references", str(designs)])
    assert code == 1
    assert read_error(capsys)["error"] == "CommandError"


# -- process level ----------------------------------------------------------------


def test_module_entry_and_log_verbosity(corpus, tmp_path):
    result = subprocess.run(
        [sys.executable, "-m", "cdrgen.cli", "prepare",
         "--manifest", str(corpus), "--out", str(tmp_path / "out")],
        capture_output=True, text=True,
        env={"CDRGEN_LOG_LEVEL": "INFO", "PATH": "/usr/bin:/bin",
             "PYTHONPATH": ""},
        cwd="/root/pkg",
    )
    assert result.returncode == 0
    assert "prepared toy00" in result.stderr
    summary = json.loads(result.stdout)
    assert len(summary["instances"]) == 2
