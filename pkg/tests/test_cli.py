import numpy as np
import pytest

from sdecgmca import cli, io

SMALL = ["--n-side", "8", "--n-sources", "2", "--n-channels", "3"]


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_simulate_layout_and_determinism(tmp_path):
    args = ["simulate", "--n-sources", "4", "--n-channels", "8", "--seed", "3"]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert sum(f.startswith("X_") for f in files) == 8
    assert sum(f.startswith("S_") and f.endswith(".map") for f in files) == 4
    assert "A.csv" in files and "meta.json" in files and "kernels.csv" in files
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_simulate_sweep_subdirectories(tmp_path):
    assert run("simulate", *SMALL, "--sweep", "snr_db", "--values", "-10", "0", "10", "--out", tmp_path) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["snr_db=-10.0", "snr_db=0.0", "snr_db=10.0"]
    assert run("simulate", *SMALL, "--sweep", "snr_db", "--out", tmp_path) == 2


def test_usage_errors(tmp_path, capsys):
    assert run("run", *SMALL, "--method", "magic", "--out", tmp_path) == 2
    assert "unknown method" in capsys.readouterr().err
    assert run("frobnicate") == 2
    assert run("gridsearch", *SMALL, "--method", "hals", "--out", tmp_path) == 2
    assert run("compare", *SMALL, "--trials", "0", "--out", tmp_path) == 2
    assert run("sweep", *SMALL, "--variable", "cond", "--values", "2", "--method", "magic", "--out", tmp_path) == 2
    (tmp_path / "cfg.txt").write_text("not_a_key = 1\n")
    assert run("run", *SMALL, "--config", tmp_path / "cfg.txt", "--out", tmp_path / "r") == 2


def test_numerical_failure_exit_code(tmp_path):
    (tmp_path / "cfg.txt").write_text("n_s = 5\n")
    assert run("run", *SMALL, "--config", tmp_path / "cfg.txt", "--out", tmp_path / "r") == 3


def test_run_sdecgmca_outputs(tmp_path):
    out = tmp_path / "r"
    assert run("run", *SMALL, "--seed", "4", "--c-wu", "0.7", "--c-ref", "2", "--out", out) == 0
    names = {p.name for p in out.iterdir()}
    assert {"A.csv", "S_0.map", "S_1.map", "diagnostics.csv", "config.txt", "metrics.csv"} <= names
    rows = io.read_rows(out / "diagnostics.csv")
    stages = [r["stage"] for r in rows]
    switches = sum(a != b for a, b in zip(stages, stages[1:]))
    assert switches == 1 and stages[0] == "warmup" and stages[-1] == "refinement"
    assert list(rows[0]) == ["iter", "stage", "c", "K", "rel_change"]
    config = io.read_config(out / "config.txt")
    assert config["c_wu"] == 0.7 and config["n_s"] == 2
    assert io.read_matrix(out / "A.csv").shape == (3, 2)


def test_run_from_dataset_oracle_noiseless(tmp_path):
    data = tmp_path / "d"
    assert run("simulate", *SMALL, "--snr-db", "inf", "--seed", "5", "--out", data) == 0
    out = tmp_path / "r"
    assert run("run", "--data", data, "--method", "oracle", "--c", "1e-4", "--out", out) == 0
    row = io.read_rows(out / "metrics.csv")[0]
    assert row["method"] == "oracle" and float(row["nmse_db"]) > 40


def test_run_hals_and_gmca(tmp_path):
    for method in ("gmca", "hals"):
        out = tmp_path / method
        assert run("run", *SMALL, "--method", method, "--out", out) == 0
        assert float(io.read_rows(out / "metrics.csv")[0]["c_a_db"]) > 0
        assert not (out / "diagnostics.csv").exists()


def test_gridsearch_noiseless_strategy1(tmp_path):
    args = ["gridsearch", *SMALL, "--snr-db", "inf", "--trials", "1", "--strategy", "1"]
    args += ["--grid-low", "1e-6", "--grid-high", "1", "--grid-count", "4", "--out", tmp_path]
    assert run(*args) == 0
    rows = io.read_rows(tmp_path / "gridsearch.csv")
    assert len(rows) == 4
    c_opt = float(io.read_rows(tmp_path / "c_opt.csv")[0]["c_opt"])
    assert c_opt == pytest.approx(1e-6)


def test_sweep_rows_and_determinism(tmp_path):
    args = ["sweep", *SMALL, "--variable", "snr_db", "--values", "0", "10", "--trials", "1"]
    args += ["--method", "nonblind", "hals", "--strategy", "2", "4", "--grid-count", "3"]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    rows = io.read_rows(tmp_path / "a" / "sweep.csv")
    # one row per value and method label with a single trial
    assert len(rows) == 2 * 3
    assert {r["method"] for r in rows} == {"nonblind2", "nonblind4", "hals"}
    assert all(r["status"] == "ok" for r in rows)
    for name in ("sweep.csv", "summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_compare_outputs(tmp_path):
    args = ["compare", *SMALL, "--trials", "2", "--grid-count", "3", "--method", "oracle", "hals"]
    assert run(*args, "--out", tmp_path) == 0
    rows = io.read_rows(tmp_path / "metrics.csv")
    assert [(r["trial"], r["method"]) for r in rows] == [("0", "oracle"), ("0", "hals"), ("1", "oracle"), ("1", "hals")]
    summary = io.read_rows(tmp_path / "summary.csv")
    assert [r["method"] for r in summary] == ["oracle", "hals"]
    assert np.isfinite(float(summary[0]["mean_nmse_db"]))
    assert {r["strategy"] for r in io.read_rows(tmp_path / "c_opt.csv")} == {"2", "3", "4"}
