import json

import pytest

from driftplan.cli import EXIT_CONFIG, EXIT_OK, EXIT_PARTIAL, main

FAST_CFG = """
rows = 14
cols = 14
K = 2
C_grid = 10
svr_eps_grid = 0.01
gamma_grid = 100
folds = 3
n_steps = 20
kmeans_restarts = 2
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "fast.cfg"
    p.write_text(FAST_CFG)
    return str(p)


def test_stage_by_stage(tmp_path, cfg, capsys):
    w = str(tmp_path / "w")
    common = ["--config", cfg, "--out", w, "--seed", "5"]
    assert main(["gen", *common]) == EXIT_OK
    assert main(["segment", *common, "--field", f"{w}/field.csv"]) == EXIT_OK
    assert main(["cluster", *common, "--field", f"{w}/field.csv", "--segments", f"{w}/segments.json"]) == EXIT_OK
    assert main(["plan", *common, "--field", f"{w}/field.csv", "--clustering", f"{w}/clustering.json",
                 "--strategy", "graph"]) == EXIT_OK
    plan = json.loads((tmp_path / "w" / "plan_graph.json").read_text())
    assert plan["strategy"] == "graph"
    assert main(["simulate", *common, "--field", f"{w}/field.csv", "--plan", f"{w}/plan_graph.json"]) == EXIT_OK
    assert main(["reconstruct", *common, "--field", f"{w}/field.csv",
                 "--observations", f"{w}/observations.csv"]) == EXIT_OK
    assert "mean_rho=" in capsys.readouterr().out
    for name in ("predicted.csv", "models.json", "errors.csv", "cdf.csv"):
        assert (tmp_path / "w" / name).exists()


def test_uniform_plan_needs_no_clustering(tmp_path, cfg):
    w = str(tmp_path)
    assert main(["gen", "--config", cfg, "--out", w]) == EXIT_OK
    assert main(["plan", "--config", cfg, "--out", w, "--field", f"{w}/field.csv", "--strategy", "uniform"]) == EXIT_OK
    assert main(["plan", "--config", cfg, "--out", w, "--field", f"{w}/field.csv", "--strategy", "graph"]) == EXIT_CONFIG


def test_run_and_sweep(tmp_path, cfg):
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "r")]) == EXIT_OK
    assert (tmp_path / "r" / "results.csv").exists()
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "s"), "--axis", "K", "--values", "2,3"]) == EXIT_OK
    assert (tmp_path / "s" / "sweep_K.csv").exists()
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "s"), "--axis", "K", "--values", "a"]) == EXIT_CONFIG


def test_bad_config_exit_code(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("K = -1\n")
    assert main(["run", "--config", str(p), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG


def test_missing_input_file(tmp_path, cfg):
    assert main(["segment", "--config", cfg, "--out", str(tmp_path), "--field", str(tmp_path / "x.csv")]) == EXIT_CONFIG


def test_partial_failure_exit_code(tmp_path, cfg):
    p = tmp_path / "huge.cfg"
    p.write_text(FAST_CFG.replace("K = 2", "K = 100000") + "strategies = uniform\n")
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_PARTIAL
