from __future__ import annotations

import json
import subprocess
import sys

import pytest

from structconf.cli import build_parser, main


@pytest.fixture()
def synth_files(tmp_path):
    data = tmp_path / "scm.csv"
    prior = tmp_path / "prior.json"
    assert main(["synth", "--n", "400", "--seed", "3", "--out", str(data), "--prior-out", str(prior)]) == 0
    return data, tmp_path / "scm.meta.json", prior


def test_synth_then_run(synth_files, tmp_path):
    data, meta, prior = synth_files
    out = tmp_path / "report.json"
    assert main(["run", "--data", str(data), "--meta", str(meta), "--prior", str(prior), "--seed", "7",
                 "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["seed"] == 7 and report["n"] == 400
    assert 0.0 <= report["coverage_pseudo"] <= 1.0
    assert report["coverage_cate"] is None


def test_run_is_byte_deterministic(synth_files, tmp_path):
    data, meta, prior = synth_files
    texts = []
    for name in ("a.json", "b.json"):
        main(["run", "--data", str(data), "--meta", str(meta), "--prior", str(prior), "--out", str(tmp_path / name)])
        texts.append((tmp_path / name).read_bytes())
    assert texts[0] == texts[1]


def test_run_multi_seed_and_flags(synth_files, tmp_path, capsys):
    data, meta, _ = synth_files
    assert main(["run", "--data", str(data), "--meta", str(meta), "--seeds", "1,2", "--splits", "0.5,0.25,0.25",
                 "--variant", "top1", "--k", "3"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert len(out["per_seed"]) == 2 and out["summary"]["coverage_pseudo"]["count"] == 2
    assert out["per_seed"][0]["split_sizes"] == [200, 100, 100]


def test_synth_collider(tmp_path):
    out = tmp_path / "col.csv"
    main(["synth", "--kind", "collider", "--n", "100", "--out", str(out)])
    meta = json.loads((tmp_path / "col.meta.json").read_text())
    assert "X_col" in out.read_text().splitlines()[0]
    assert "X_col" in meta["post_treatment"]


def test_experiment_calibration(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n": 400, "alphas": [0.05, 0.1, 0.5], "run": {"seed": 5}}))
    out = tmp_path / "sweep.json"
    assert main(["experiment", "--name", "calibration", "--config", str(cfg), "--out", str(out)]) == 0
    rows = json.loads(out.read_text())["rows"]
    assert [r["alpha"] for r in rows] == [0.05, 0.1, 0.5]


def test_experiment_collider(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n": 300, "seeds": [1]}))
    out = tmp_path / "col.json"
    main(["experiment", "--name", "collider", "--config", str(cfg), "--out", str(out)])
    assert json.loads(out.read_text())["collider_excluded_all_runs"] is True


def test_parser_rejects_bad_choices():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["run", "--data", "x", "--meta", "y", "--variant", "bogus"])
    with pytest.raises(SystemExit):
        build_parser().parse_args(["experiment", "--name", "tables"])


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "structconf", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "synth" in proc.stdout
