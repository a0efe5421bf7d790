import csv
import json
import subprocess
import sys

import pytest

from exchgp import reports
from exchgp.cli import parse_args, run
from exchgp.errors import ConfigError
from exchgp.panel import load_panel

FAST = ["--restarts", "1", "--max-iters", "200", "--log-level", "WARNING"]


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def sim_panel(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    code = run(["simulate", "--units", "8", "--times", "16", "--covariates", "1", "--treated-units", "1",
                "--treat-at", "11", "--effect", "3", "--seed", "7", "--out", str(out), "--log-level", "WARNING"])
    assert code == 0
    return out / "panel.csv"


def test_simulate_output_reloads(sim_panel):
    data = load_panel(sim_panel)
    assert (data.m, data.p) == (8, 1)
    assert [u.unit_id for u in data.treated()] == ["u000"]


def test_simulate_default_size(tmp_path):
    assert run(["simulate", "--units", "30", "--times", "50", "--seed", "7", "--out", str(tmp_path)]) == 0
    data = load_panel(tmp_path / "panel.csv")
    assert data.m == 30 and data.row_count() == 1500


def test_fit_writes_tables(sim_panel, tmp_path):
    code = run(["fit", "--input", str(sim_panel), "--model", "ou-time-cov", "--treated", "u000",
                "--t0", "11", "--out", str(tmp_path), "--dump-trajectories", *FAST])
    assert code == 0
    agg = _rows(tmp_path / "report.csv")
    assert len(agg) == 1 and agg[0]["unit"] == "u000" and agg[0]["n_post"] == "5"
    assert float(agg[0]["tau_lo"]) < float(agg[0]["tau"]) < float(agg[0]["tau_hi"])
    eff = _rows(tmp_path / "effects.csv")
    assert [r["time"] for r in eff] == ["12", "13", "14", "15", "16"]
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    names = {f["name"] for f in manifest["files"]}
    assert names == {"report.csv", "effects.csv", "report.json", "trajectories.csv"}
    assert manifest["seed"] == 0
    assert "wall_time_s" not in json.loads((tmp_path / "report.json").read_text())["fit"]


def test_predict_reuses_fitted_theta(sim_panel, tmp_path):
    assert run(["fit", "--input", str(sim_panel), "--out", str(tmp_path / "f"), *FAST]) == 0
    assert run(["predict", "--input", str(sim_panel), "--theta", str(tmp_path / "f" / "report.json"),
                "--out", str(tmp_path / "p"), *FAST]) == 0
    a = _rows(tmp_path / "f" / "effects.csv")
    b = _rows(tmp_path / "p" / "effects.csv")
    assert a == b


def test_reports_are_reproducible(sim_panel, tmp_path):
    args = ["validate", "--input", str(sim_panel), "--models", "ou-time", "--fraction", "0.3", *FAST]
    assert run([*args, "--out", str(tmp_path / "a")]) == 0
    assert run([*args, "--out", str(tmp_path / "b")]) == 0
    ha = {f["name"]: f["sha256"] for f in json.loads((tmp_path / "a" / "manifest.json").read_text())["files"]}
    hb = {f["name"]: f["sha256"] for f in json.loads((tmp_path / "b" / "manifest.json").read_text())["files"]}
    assert ha == hb
    assert ha["report.csv"] == reports.sha256(tmp_path / "a" / "report.csv")


def test_validate_tables(sim_panel, tmp_path):
    code = run(["validate", "--input", str(sim_panel), "--models", "ou-time,rbf-time", "--fake-time", "8",
                "--out", str(tmp_path), "--record-timings", *FAST])
    assert code == 0
    summary = _rows(tmp_path / "report.csv")
    assert [r["model"] for r in summary] == ["ou-time", "rbf-time"]
    assert all(r["n_predictions"] == str(8 * 3) for r in summary)
    assert "opt_time_s" in summary[0]
    horizon = _rows(tmp_path / "horizon.csv")
    assert sorted({r["horizon"] for r in horizon}) == ["1", "2", "3"]


def test_staggered_cli(sim_panel, tmp_path):
    code = run(["staggered", "--input", str(sim_panel), "--model", "ou-time", "--controls", "4",
                "--mode", "validate", "--out", str(tmp_path), *FAST])
    assert code == 0
    total = _rows(tmp_path / "report.csv")[0]
    assert total["experiment"] == "validation" and total["n_units"] == "1"
    assert (tmp_path / "att.csv").exists() and (tmp_path / "validation.csv").exists()


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"restarts": 5, "seed": 11, "model": "rbf-time"}))
    args = parse_args(["fit", "--config", str(cfg), "--input", "x.csv", "--seed", "2"])
    assert (args.restarts, args.seed, args.model) == (5, 2, "rbf-time")
    cfg.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(ConfigError):
        parse_args(["fit", "--config", str(cfg)])


def test_exit_codes(sim_panel, tmp_path, capsys):
    assert run(["fit", "--input", str(sim_panel), "--model", "nope", "--out", str(tmp_path)]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "ConfigError" and err["exit_code"] == 2
    assert run(["fit", "--input", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("unit,time,outcome\na,1,abc\n")
    assert run(["fit", "--input", str(bad), "--t0", "1", "--treated", "a", "--out", str(tmp_path)]) == 3
    assert run([]) == 2
    assert run(["fit", "--restarts", "x"]) == 2


def test_shared_cov_flag(sim_panel, tmp_path):
    assert run(["fit", "--input", str(sim_panel), "--shared-cov", "nope", "--out", str(tmp_path)]) == 2
    assert run(["fit", "--input", str(sim_panel), "--shared-cov", "x1", "--out", str(tmp_path), *FAST]) == 0


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "exchgp", "simulate", "--units", "3", "--times", "5",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "panel.csv").exists()
