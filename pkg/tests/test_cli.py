import json
import os
import subprocess
import sys

import numpy as np
import pytest

from l1qr import cli, dataio
from l1qr.core import DataError
from l1qr.lp import SolverError


def write_csv(path, header, rows):
    path.write_text(",".join(header) + "\n" +
                    "".join(",".join(repr(float(v)) for v in r) + "\n" for r in rows))
    return path


@pytest.fixture
def gaussian_csv(tmp_path):
    rng = np.random.default_rng(100)
    X = rng.standard_normal((100, 50))
    y = 2 * X[:, 0] + rng.standard_normal(100)
    return write_csv(tmp_path / "g.csv", ["y"] + [f"x{j}" for j in range(50)],
                     np.column_stack([y, X]))


@pytest.fixture
def noise_csv(tmp_path):
    rng = np.random.default_rng(101)
    return write_csv(tmp_path / "noise.csv", ["y"] + [f"x{j}" for j in range(20)],
                     rng.standard_normal((60, 21)))


def test_parse_small_csv(tmp_path):
    f = tmp_path / "s.csv"
    f.write_text("y,a,b\n1,2,3\n4,5,7\n7,8,8\n")
    d = dataio.parse_csv_dataset(f, "y")
    assert d.p == 3 and d.names == ("intercept", "a", "b") and d.intercept_col == 0
    assert d.y.tolist() == [1, 4, 7]
    assert dataio.parse_csv_dataset(f, 0, add_intercept=False).p == 2


def test_parse_bad_response_index(tmp_path):
    f = tmp_path / "s.csv"
    f.write_text("y,a,b\n1,2,3\n4,5,7\n")
    with pytest.raises(DataError, match="index 5"):
        dataio.parse_csv_dataset(f, 5)
    with pytest.raises(DataError, match="'z'"):
        dataio.parse_csv_dataset(f, "z")


def test_parse_na_lists_rows(tmp_path):
    f = tmp_path / "s.csv"
    f.write_text("y,a\n1,2\n3,NA\n5,6\nNA,1\n")
    with pytest.raises(DataError, match=r"row 3: .*'NA'.*row 5"):
        dataio.parse_csv_dataset(f, "y")


def test_calibrate_artifact_is_reproducible(gaussian_csv, tmp_path):
    outs = []
    for i, threads in enumerate(["1", "1", "4"]):
        out = tmp_path / f"cal{i}.json"
        argv = ["calibrate", "-i", str(gaussian_csv), "-y", "y", "-q", "0.1:0.9:0.1",
                "--alpha", "0.1", "--c", "2", "--R", "1000", "--seed", "11",
                "--threads", threads, "-o", str(out)]
        assert cli.main(argv) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] == outs[2]
    doc = json.loads(outs[0])
    assert doc["lambda0"] > 0 and len(doc["lambda_samples"]) == 1000
    assert doc["config"]["seed"] == 11 and "threads" not in doc["config"]


def test_path_starts_from_empty_model(noise_csv, capsys):
    assert cli.main(["path", "-i", str(noise_csv), "-y", "y", "--K", "5", "--format", "csv"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "step,lambda,n_selected,selected"
    assert len(lines) == 6
    assert lines[1].split(",")[2] == "0"


def test_fit_outputs(gaussian_csv, capsys):
    assert cli.main(["fit", "-i", str(gaussian_csv), "-y", "y", "-q", "0.25,0.5",
                     "--gamma", "0.1", "--dense"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert [f["u"] for f in doc["fits"]] == [0.25, 0.5]
    for f in doc["fits"]:
        assert "x0" in f["support"] and f["complementary_slackness_ok"]
        assert len(f["beta"]) == 51
    assert cli.main(["fit", "-i", str(gaussian_csv), "-y", "y", "--lambda", "10",
                     "--format", "csv"]) == 0
    assert capsys.readouterr().out.startswith("u,column,beta,beta_post,beta_thresholded\n")


def test_simulate_artifacts(tmp_path):
    out = tmp_path / "sim" / "report.json"
    argv = ["simulate", "--n", "40", "--p", "30", "--s", "3", "--reps", "4", "--R", "100",
            "--seed", "2", "-o", str(out)]
    assert cli.main(argv) == 0
    rows = (tmp_path / "sim" / "report.csv").read_text().splitlines()
    assert [r.split(",")[0] for r in rows[1:]] == ["canonical", "penalized", "post", "oracle"]
    hist = (tmp_path / "sim" / "report_support_hist.csv").read_text().splitlines()
    assert hist[0] == "estimator,bin,count"
    assert json.loads((tmp_path / "sim" / "report_timing.json").read_text())["total_seconds"] >= 0
    first = out.read_bytes()
    assert cli.main(argv + ["--threads", "3"]) == 0
    assert out.read_bytes() == first


def test_config_file_round_trip(gaussian_csv, tmp_path):
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({"input": str(gaussian_csv), "response": "y",
                                    "alpha": 0.2, "R": 50, "seed": 4}))
    out = tmp_path / "cal.json"
    assert cli.main(["calibrate", "--config", str(cfg_file), "--seed", "5", "-o", str(out)]) == 0
    echo = json.loads(out.read_text())["config"]
    assert echo["alpha"] == 0.2 and echo["R"] == 50 and echo["seed"] == 5
    # feeding the echoed config back reproduces the artifact
    cfg2 = tmp_path / "cfg2.json"
    cfg2.write_text(json.dumps(echo))
    out2 = tmp_path / "cal2.json"
    assert cli.main(["calibrate", "--config", str(cfg2), "-o", str(out2)]) == 0
    assert out2.read_bytes() == out.read_bytes()


def test_atomic_write_leaves_no_partial_file(tmp_path, monkeypatch):
    target = tmp_path / "out.json"
    target.write_text("old")

    def boom(src, dst):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        dataio.write_atomic(target, "new contents")
    assert target.read_text() == "old"
    assert [p.name for p in tmp_path.iterdir()] == ["out.json"]


@pytest.mark.parametrize("argv", [
    [],
    ["fit"],
    ["fit", "-i", "missing.csv", "-y", "y"],
    ["calibrate", "-i", "x.csv", "-y", "y", "--alpha", "1.5"],
    ["simulate", "--bogus"],
    ["diagnose", "--ar1-p", "5", "--ar1-rho", "0.5", "--k", "9"],
])
def test_usage_errors_exit_1(argv, capsys):
    assert cli.main(argv) == 1
    assert "usage error" in capsys.readouterr().err


def test_numerical_failure_exits_2(gaussian_csv, monkeypatch, capsys):
    def fail(*args, **kwargs):
        raise SolverError("iteration cap")

    monkeypatch.setattr(cli, "fit_l1_qr_process", fail)
    assert cli.main(["fit", "-i", str(gaussian_csv), "-y", "y", "--lambda", "1"]) == 2
    assert "[fit]" in capsys.readouterr().err


def test_diagnose_ar1(capsys):
    assert cli.main(["diagnose", "--ar1-p", "8", "--ar1-rho", "0.5", "--k", "1,8"]) == 0
    eig = json.loads(capsys.readouterr().out)["sparse_eigenvalues"]
    assert eig[1]["min"] >= 1 / 6 and eig[1]["max"] <= 3


def test_diagnose_data_with_truth(gaussian_csv, capsys):
    assert cli.main(["diagnose", "-i", str(gaussian_csv), "-y", "y", "--k", "1,2",
                     "--truth", "x0", "--R", "100"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["matrix_kind"] == "empirical"
    assert doc["support"][0]["true_support"] == ["x0"]


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "l1qr", "diagnose", "--ar1-p", "4",
                          "--ar1-rho", "0.3", "--k", "2"], capture_output=True, text=True)
    assert res.returncode == 0 and json.loads(res.stdout)["command"] == "diagnose"
