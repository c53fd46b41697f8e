import hashlib
import json
import subprocess
import sys
from pathlib import Path

import pytest

from dqx.cli import main

CFG = """
[gen]
n_instruments = 220
n_months = 9
error_rate = 0.07
seed = 13

[train]
n_rounds = 30

[monitor]
ensemble = 3
window = 3
"""


@pytest.fixture(scope="module")
def config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "run.toml"
    path.write_text(CFG)
    return path


def run_cli(config_file, out_dir, *args):
    code = main(["--config", str(config_file), "--out-dir", str(out_dir), *args])
    assert code == 0, f"command {args} failed"


def artifact_hashes(out_dir: Path) -> dict[str, str]:
    out = {}
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and "manifests" not in p.parts:
            out[str(p.relative_to(out_dir))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


@pytest.fixture(scope="module")
def pipeline_dir(config_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("out")
    for cmd in ("gen", "featurize", "train", "evaluate", "rank", "explain",
                "copy", "monitor"):
        run_cli(config_file, out, cmd)
    return out


def test_pipeline_produces_contracted_files(pipeline_dir):
    for name in ("corpus.jsonl", "corpus.csv", "ground_truth.jsonl", "audit.log",
                 "audits.csv", "matrix.csv", "matrix_schema.json"):
        assert (pipeline_dir / name).exists(), name
    reports = pipeline_dir / "reports"
    for name in ("detection_full.csv", "detection_gold.csv", "ndcg_gold.csv",
                 "queue.csv", "global_importance.csv", "copy_report.csv",
                 "monitor.json", "evaluation.json"):
        assert (reports / name).exists(), name
    models = pipeline_dir / "models"
    assert (models / "index.json").exists()


def test_manifests_written_with_artifact_hashes(pipeline_dir):
    for cmd in ("gen", "featurize", "train", "evaluate"):
        manifest = json.loads((pipeline_dir / "manifests" / f"{cmd}.json").read_text())
        assert manifest["command"] == cmd
        assert manifest["seed"] == 13
        assert manifest["config_hash"]
        assert manifest["timings"]["total_s"] >= 0
        for art in manifest["artifacts"]:
            p = pipeline_dir / art["path"]
            assert p.exists()
            assert hashlib.sha256(p.read_bytes()).hexdigest() == art["sha256"]


def test_gen_deterministic_across_runs(config_file, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_cli(config_file, a, "gen")
    run_cli(config_file, b, "gen")
    assert artifact_hashes(a) == artifact_hashes(b)


def test_explain_local_row(config_file, pipeline_dir):
    matrix_row = json.loads(
        (pipeline_dir / "manifests" / "featurize.json").read_text())
    import csv

    with open(pipeline_dir / "matrix.csv") as fh:
        row = next(iter(__import__("csv").DictReader(fh)))
    code = main(["--config", str(config_file), "--out-dir", str(pipeline_dir),
                 "explain", "--instrument", row["instrument_id"],
                 "--month", row["ref_month"], "--type", "SecurityStatus"])
    assert code == 0
    local = json.loads((pipeline_dir / "reports" / "explain_local.json").read_text())
    assert local["instrument_id"] == row["instrument_id"]
    total = local["base"] + sum(local["contributions"].values())
    assert abs(total - local["margin"]) <= 1e-6


def test_cli_errors_are_machine_readable(tmp_path, capsys):
    code = main(["--config", str(tmp_path / "missing.toml"),
                 "--out-dir", str(tmp_path), "gen"])
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["ok"] is False
    assert err["kind"] == "config"
    # featurize before gen -> config error
    code = main(["--out-dir", str(tmp_path / "empty"), "featurize"])
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert "gen" in err["error"]


def test_unknown_config_section_rejected(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[nonsense]\nx = 1\n")
    code = main(["--config", str(bad), "--out-dir", str(tmp_path), "gen"])
    assert code == 2


def test_seed_flag_overrides_config(config_file, tmp_path):
    a, b = tmp_path / "s1", tmp_path / "s2"
    run_cli(config_file, a, "gen")
    code = main(["--config", str(config_file), "--out-dir", str(b),
                 "--seed", "999", "gen"])
    assert code == 0
    assert artifact_hashes(a) != artifact_hashes(b)
    manifest = json.loads((b / "manifests" / "gen.json").read_text())
    assert manifest["seed"] == 999


def test_help_prints_defaults():
    result = subprocess.run([sys.executable, "-m", "dqx", "--help"],
                            capture_output=True, text=True)
    assert result.returncode == 0
    assert "--seed" in result.stdout
    assert "dqx_out" in result.stdout  # defaults are shown
