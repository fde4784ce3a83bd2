import json
import subprocess
import sys

import numpy as np
import pytest

from cureah.cli import EXIT_INPUT, EXIT_OK, main
from cureah.io import loads, read_dataset


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--n", "200", "--seed", "7", "--out-dir", str(d), "--latent"]) == EXIT_OK
    return d


def test_simulate_writes_files(simulated):
    for name in ("data.csv", "tv.csv", "scenario.txt", "latent.json", "manifest.json"):
        assert (simulated / name).exists()
    ds = read_dataset(simulated / "data.csv", simulated / "tv.csv")
    assert len(ds) == 200 and (ds.q, ds.r, ds.p) == (2, 2, 1)


@pytest.fixture(scope="module")
def fitted(simulated, tmp_path_factory):
    d = tmp_path_factory.mktemp("fit")
    args = ["fit", str(simulated / "data.csv"), "--tv", str(simulated / "tv.csv"), "--out-dir", str(d)]
    assert main(args) == EXIT_OK
    return d, args


def test_fit_outputs(fitted):
    d, _ = fitted
    doc = loads((d / "fit.json").read_text())
    assert doc["converged"] and doc["sizes"]["m"] == round(200 ** (1 / 3))
    assert doc["manifest"] == "manifest.json"
    v = len(doc["eta"])
    assert np.asarray(doc["covariance"]).shape == (v, v)
    lines = (d / "baseline.csv").read_text().splitlines()
    assert lines[0] == "t,hazard,se,ci_lo,ci_hi" and len(lines) == doc["sizes"]["m"] + 1
    table = (d / "summary.txt").read_text()
    assert "OR" in table and "p-value" in table and "95% CI" in table and "HD" in table
    manifest = json.loads((d / "manifest.json").read_text())
    assert manifest["command"] == "fit" and len(manifest["inputs"]["data"]["sha256"]) == 64


def test_fit_is_deterministic(fitted, tmp_path):
    d, args = fitted
    again = args[:-1] + [str(tmp_path)]
    assert main(again) == EXIT_OK
    for name in ("fit.json", "baseline.csv", "summary.json", "summary.txt"):
        assert (tmp_path / name).read_bytes() == (d / name).read_bytes()


def test_fixed_omega_zero(simulated, tmp_path):
    args = ["fit", str(simulated / "data.csv"), "--tv", str(simulated / "tv.csv"), "--omega", "0", "--n-obs", "20", "--out-dir", str(tmp_path)]
    main(args)
    doc = loads((tmp_path / ("fit.json" if (tmp_path / "fit.json").exists() else "diagnostics.json")).read_text())
    assert doc["omega"] == 0.0 and doc["diagnostics"]["smoothing_stop"] == "fixed"


def test_config_file_and_override(simulated, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_obs": 20, "omega": 3.0}))
    out = tmp_path / "o"
    assert main(["fit", str(simulated / "data.csv"), "--tv", str(simulated / "tv.csv"), "--config", str(cfg), "--omega", "1.5", "--out-dir", str(out)]) == EXIT_OK
    doc = loads((out / "fit.json").read_text())
    assert doc["omega"] == 1.5
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["fit", str(simulated / "data.csv"), "--config", str(cfg), "--out-dir", str(out)]) == EXIT_INPUT


def test_predict(fitted, tmp_path):
    d, _ = fitted
    code = main(["predict", str(d / "fit.json"), "--z", "1,3.2", "--w", "1,1.5", "--x-schedule", "1.0:0,5:1", "--t-grid", "0,0.5,1.0", "--out-dir", str(tmp_path)])
    assert code == EXIT_OK
    rows = (tmp_path / "predict.csv").read_text().splitlines()
    assert rows[0] == "t,survival,se,ci_lo,ci_hi" and len(rows) == 4
    assert rows[1].split(",")[1] == "1"
    assert main(["predict", str(d / "fit.json"), "--z", "1,3.2", "--w", "1,1.5", "--x-schedule", "1.0:0", "--t-grid", "1e6", "--out-dir", str(tmp_path)]) == EXIT_INPUT


def test_bad_csv_reports_line(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("t_left,t_right,z_1,w_1\n0.5,1.0,1,0.2\n0.7,abc,1,0.3\n")
    out = tmp_path / "out"
    assert main(["fit", str(bad), "--out-dir", str(out)]) == EXIT_INPUT
    assert "line 3" in capsys.readouterr().err
    assert not out.exists()  # nothing written on error


def test_inverted_interval_rejected(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("t_left,t_right,z_1,w_1\n1.5,1.0,1,0.2\n")
    assert main(["fit", str(bad), "--out-dir", str(tmp_path)]) == EXIT_INPUT


def test_unknown_flag_and_module_entry():
    assert main(["fit"]) == EXIT_INPUT
    res = subprocess.run([sys.executable, "-m", "cureah", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "simulate" in res.stdout


def test_replicate_command(tmp_path):
    sc = tmp_path / "sc.txt"
    sc.write_text("n = 150\nseed = 4\nn_o = 5\n")
    assert main(["replicate", "--scenario", str(sc), "--reps", "2", "--omega", "5", "--out-dir", str(tmp_path)]) == EXIT_OK
    report = loads((tmp_path / "report.json").read_text())
    assert report["reps"] == 2 and set(report["parameters"]) <= {"alpha_1", "alpha_2", "beta_1", "gamma_1", "gamma_2"}
    assert (tmp_path / "report.csv").read_text().startswith("quantity,ABIAS")
