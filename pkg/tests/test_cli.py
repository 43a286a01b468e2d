import json
import subprocess
import sys

import numpy as np
import pytest

from posbias.cli import main
from posbias.embedding import read_assignment_csv

TINY = {
    "sim": {"n_items": 6, "n_positions": 4, "n_users": 12, "d_item_features": 10, "n_impressions": 3000},
    "em": {"max_iter": 4, "gbdt": {"n_trees": 10}},
    "embedding": {"m": 3, "vae": {"epochs": 30}},
    "eval": {"n_trials": 2},
}


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(TINY))
    return str(p)


def run(*args):
    return main([str(a) for a in args])


def test_simulate_files_and_determinism(cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("simulate", "--config", cfg, "--out", a) == 0
    assert run("simulate", "--config", cfg, "--out", b) == 0
    for name in ("log.csv", "truth.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert (a / "log.csv").read_text().startswith("# config_hash=")
    assert "config_hash" in json.loads((a / "truth.json").read_text())["meta"]


def test_simulate_invalid_config(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"sim": {"n_items": 0}}))
    assert run("simulate", "--config", p, "--out", tmp_path / "o") == 2
    assert "n_items" in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert run("simulate", "--config", tmp_path / "nope.json", "--out", tmp_path / "o") == 2
    assert "not found" in capsys.readouterr().err


def test_embed_methods(cfg, tmp_path, capsys):
    run("simulate", "--config", cfg, "--out", tmp_path)
    truth = tmp_path / "truth.json"
    assert run("embed", "--config", cfg, "--features", truth, "--method", "lsi", "--m", 4, "--out", tmp_path / "l") == 0
    p = read_assignment_csv(tmp_path / "l" / "assignment.csv").probs
    assert p.shape == (6, 4) and np.allclose(p.sum(axis=1), 1, atol=1e-9)
    assert run("embed", "--features", truth, "--method", "identity", "--out", tmp_path / "i") == 0
    assert np.array_equal(read_assignment_csv(tmp_path / "i" / "assignment.csv").probs, np.eye(6))
    assert run("embed", "--config", cfg, "--features", truth, "--method", "vae", "--out", tmp_path / "v") == 0
    capsys.readouterr()
    assert run("embed", "--features", truth, "--method", "pca", "--out", tmp_path / "x") == 2
    err = capsys.readouterr().err
    assert all(m in err for m in ("lsi", "vae", "identity"))


def test_estimate_and_evaluate(cfg, tmp_path):
    run("simulate", "--config", cfg, "--out", tmp_path)
    run("embed", "--config", cfg, "--features", tmp_path / "truth.json", "--out", tmp_path)
    outs = []
    for name in ("e1", "e2"):
        assert run("estimate", "--config", cfg, "--log", tmp_path / "log.csv",
                   "--assignment", tmp_path / "assignment.csv", "--out", tmp_path / name) == 0
        outs.append((tmp_path / name / "em_state.json").read_bytes())
    assert outs[0] == outs[1]
    state = json.loads(outs[0])
    assert len(state["theta"]) == 4 and state["status"] in ("converged", "max_iter")
    assert run("evaluate", "--config", cfg, "--state", tmp_path / "e1" / "em_state.json",
               "--truth", tmp_path / "truth.json", "--log", tmp_path / "log.csv", "--out", tmp_path / "r") == 0
    rep = json.loads((tmp_path / "r" / "report.json").read_text())
    assert 0 <= rep["report"]["mrr"] <= 1 and "config_hash" in rep["meta"]


def test_estimate_bad_inputs(cfg, tmp_path):
    assert run("estimate", "--log", tmp_path / "missing.csv", "--out", tmp_path / "o") == 2
    assert run("estimate", "--out", tmp_path / "o") == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("u0,item_id,click,position\n0.1,0,2,0\n")
    assert run("estimate", "--log", bad, "--out", tmp_path / "o") != 0


def test_evaluate_bad_inputs(tmp_path):
    assert run("evaluate", "--state", tmp_path / "s.json", "--truth", tmp_path / "t.json", "--out", tmp_path) == 2


def test_pipeline_report(cfg, tmp_path, capsys):
    out = tmp_path / "deep" / "missing" / "dir"
    assert run("pipeline", "--config", cfg, "--out", out, "--quiet") == 0
    rep = json.loads((out / "report.json").read_text())
    assert set(rep["methods"]) == {"REM", "LSI + REM", "VAE + REM"}
    assert all(r["n_trials"] == 2 for r in rep["methods"].values())
    table = (out / "report.txt").read_text()
    assert table.count("±") >= 3 * 5
    assert (out / "config.json").exists()


def test_pipeline_byte_identical(cfg, tmp_path):
    run("pipeline", "--config", cfg, "--out", tmp_path / "a", "--quiet")
    run("pipeline", "--config", cfg, "--out", tmp_path / "b", "--quiet")
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


def test_output_root_env(cfg, tmp_path, monkeypatch):
    monkeypatch.setenv("POSBIAS_OUTPUT_ROOT", str(tmp_path / "root"))
    assert run("simulate", "--config", cfg, "--out", "rel") == 0
    assert (tmp_path / "root" / "rel" / "log.csv").exists()


def test_module_entry_point(cfg, tmp_path):
    res = subprocess.run([sys.executable, "-m", "posbias.cli", "simulate", "--config", cfg,
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "log.csv").exists()
