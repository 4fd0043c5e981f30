import csv
import json
import subprocess
import sys

import pytest

from hgvar.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, load_config, run


@pytest.fixture
def fast_config(tmp_path):
    cfg = {"sampler": {"total_iterations": 40, "burn_in": 20, "thin": 1, "seed": 3},
           "simulate": {"N": 8, "T": 60}, "structural": {"horizon": 8,
                                                          "regress_horizons": ["2", "peak"]}}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def simulated(tmp_path, fast_config):
    out = tmp_path / "run"
    assert run(["simulate", "--config", str(fast_config), "--out", str(out)]) == 0
    return out, fast_config


def test_full_pipeline(simulated):
    out, cfg = simulated
    for cmd in ("estimate", "irf", "fevd", "classify", "regress", "gini"):
        assert run([cmd, "--config", str(cfg), "--out", str(out)]) == 0, cmd
    irf = _rows(out / "irf.csv")
    assert {r["horizon"] for r in irf} == {str(h) for h in range(9)}
    assert all(float(r["q16"]) <= float(r["q50"]) <= float(r["q84"]) for r in irf)
    classes = _rows(out / "classification.csv")
    assert len(classes) == 8
    reg = _rows(out / "regression.csv")
    assert {r["horizon"] for r in reg} == {"2", "peak"}
    manifest = json.loads((out / "manifest_irf.json").read_text())
    assert manifest["seed"] == 3 and len(manifest["config_sha256"]) == 64
    assert any(k.endswith("posterior.bin") for k in manifest["inputs"])
    assert "timestamp" not in json.dumps(manifest)


def test_fevd_rows_sum_to_one(simulated):
    out, cfg = simulated
    for cmd in ("estimate", "fevd"):
        assert run([cmd, "--config", str(cfg), "--out", str(out)]) == 0
    totals = {}
    for r in _rows(out / "fevd.csv"):
        key = (r["region"], r["variable"], r["horizon"])
        totals[key] = totals.get(key, 0.0) + float(r["mean"])
    assert max(abs(v - 1) for v in totals.values()) < 1e-10


def test_estimate_is_byte_identical(simulated, tmp_path):
    out, cfg = simulated
    assert run(["estimate", "--config", str(cfg), "--out", str(out)]) == 0
    first = (out / "posterior.bin").read_bytes()
    assert run(["estimate", "--config", str(cfg), "--out", str(out), "--threads", "2"]) == 0
    assert (out / "posterior.bin").read_bytes() == first
    assert run(["estimate", "--config", str(cfg), "--out", str(out), "--seed", "4"]) == 0
    assert (out / "posterior.bin").read_bytes() != first


def test_environment_overrides(simulated, monkeypatch):
    out, cfg = simulated
    monkeypatch.setenv("HGVAR_CONFIG", str(cfg))
    monkeypatch.setenv("HGVAR_OUT", str(out))
    monkeypatch.setenv("HGVAR_SEED", "11")
    monkeypatch.setenv("HGVAR_HORIZON", "3")
    assert run(["estimate"]) == 0
    assert json.loads((out / "manifest_estimate.json").read_text())["seed"] == 11
    assert run(["irf", "--horizon", "2"]) == 0
    assert max(int(r["horizon"]) for r in _rows(out / "irf.csv")) == 2
    assert run(["irf"]) == 0
    assert max(int(r["horizon"]) for r in _rows(out / "irf.csv")) == 3


def test_config_errors_are_all_listed(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model": {"P": 0, "bogus": 1},
                               "sampler": {"burn_in": 10, "total_iterations": 5},
                               "extra": True}))
    assert run(["irf", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    err = json.loads(capsys.readouterr().err)
    assert err["exit_code"] == EXIT_CONFIG and len(err["problems"]) == 4


def test_invalid_json_and_flags(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(["irf", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert run(["irf", "--out", str(tmp_path), "--threads", "0"]) == EXIT_CONFIG


def test_missing_inputs_are_io_errors(tmp_path, capsys):
    assert run(["irf", "--out", str(tmp_path)]) == EXIT_IO
    assert json.loads(capsys.readouterr().err)["error"] == "FileNotFoundError"


def test_schema_error_exit_code(simulated, capsys):
    out, cfg = simulated
    (out / "centroids.csv").write_text("region,x,y,convention,colour\nR00,0,0,planar,red\n")
    assert run(["estimate", "--config", str(cfg), "--out", str(out)]) == EXIT_CONFIG
    assert "unknown columns" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_error_exit_code(simulated, capsys):
    out, cfg = simulated
    panel = out / "panel.csv"
    lines = panel.read_text().splitlines()
    lines[1:] = [",".join(line.split(",")[:3] + ["1e308"]) if "R00" in line else line
                 for line in lines[1:]]
    panel.write_text("\n".join(lines) + "\n")
    assert run(["estimate", "--config", str(cfg), "--out", str(out)]) == EXIT_NUMERIC
    assert json.loads(capsys.readouterr().err)["exit_code"] == EXIT_NUMERIC


def test_regress_with_optional_unemployment(simulated, tmp_path):
    out, _ = simulated
    cfg = json.loads((tmp_path / "cfg.json").read_text())
    cfg["structural"]["regress_covariates"] = ["agric", "dir", "unemp"]
    path = tmp_path / "cfg2.json"
    path.write_text(json.dumps(cfg))
    for cmd in ("estimate", "regress"):
        assert run([cmd, "--config", str(path), "--out", str(out)]) == 0
    terms = {r["term"] for r in _rows(out / "regression.csv")}
    assert terms == {"agric", "dir", "unemp", "Intercept"}
    cfg["structural"]["regress_covariates"] = ["shoe_size"]
    path.write_text(json.dumps(cfg))
    assert run(["regress", "--config", str(path), "--out", str(out)]) == EXIT_CONFIG


def test_bundled_config_loads():
    cfg, _, canonical = load_config(None)
    assert cfg.sampler.total_iterations == 600 and cfg.simulate.N == 8
    assert json.loads(canonical)["model"]["P"] == 1


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "hgvar", "--help"], capture_output=True,
                          text=True)
    assert proc.returncode == 0 and "simulate" in proc.stdout
