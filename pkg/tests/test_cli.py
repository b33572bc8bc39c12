import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from weyllab.cli import SCENARIOS, ConfigError, main, parse_config, run_scenario

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


# parsing ----------------------------------------------------------------------

def test_parse_defaults_and_overrides(tmp_path):
    cfg = parse_config(write(tmp_path, "scenario = egorov\n# comment\nn_x = 64   # trailing\neps = 0.2, 0.1\n"))
    assert cfg.scenario == "egorov"
    assert cfg["n_x"] == 64 and cfg["eps"] == [0.2, 0.1]
    assert cfg["model"] == "quartic" and cfg.slope_band == 0.3
    assert cfg.tolerances == SCENARIOS["egorov"]["tol"]


def test_parse_tolerance_override(tmp_path):
    cfg = parse_config(write(tmp_path, "scenario = quantize-check\ntol_identity = 1e-3\nslope_band = 0.1\n"))
    assert cfg.tolerances["identity"] == 1e-3 and cfg.slope_band == 0.1


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.cfg")))
def test_shipped_configs_parse(name):
    assert parse_config(CONFIGS / name).scenario in SCENARIOS


@pytest.mark.parametrize("text, msg", [
    ("scenario = egorov\nn_x = 0\n", "n_x must be positive, line 2"),
    ("scenario = egorov\nn_x = -4\n", "n_x must be positive, line 2"),
    ("scenario = egorov\nn_x = 63\n", "n_x must be even"),
    ("scenario = egorov\nn_x = many\n", "n_x must be a number, line 2"),
    ("n_x = 64\n", "missing 'scenario' key; valid scenarios: bo-dynamics, dirac"),
    ("scenario = wavelets\n", "unknown scenario 'wavelets', line 1; valid scenarios"),
    ("scenario = egorov\ncolour = blue\n", "unknown key 'colour', line 2"),
    ("scenario = egorov\nt = 1\nt = 2\n", "duplicate key 't', line 3"),
    ("scenario = egorov\neps = 0.1, 0.2\n", "sorted descending, line 2"),
    ("scenario = egorov\neps = 0.1, -0.05\n", "eps must be positive"),
    ("scenario = egorov\neps = a, b\n", "comma-separated"),
    ("scenario = egorov\njust text\n", "expected 'key = value', line 2"),
    ("scenario = egorov\nt =\n", "empty key or value, line 2"),
    ("scenario = egorov\nmodel = dirac\n", "not available for egorov"),
    ("scenario = egorov\ntol_speed = 1\n", "unknown tolerance 'tol_speed'"),
    ("scenario = moyal-convergence\norder = 99\n", "order must be at most"),
])
def test_parse_errors(tmp_path, text, msg):
    with pytest.raises(ConfigError, match=msg.replace("(", r"\(").replace(")", r"\)")):
        parse_config(write(tmp_path, text))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(tmp_path / "absent.cfg")


# running --------------------------------------------------------------------------

def test_exit_zero_and_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(CONFIGS / "quantize-check.cfg"), "--out", str(out)]) == 0
    assert "PASS identity" in capsys.readouterr().out
    rows = list(csv.reader(open(out / "metrics.csv")))
    assert rows[0] == ["scenario", "metric", "eps", "t", "value"]
    assert all(r[0] == "quantize-check" for r in rows[1:]) and len(rows) > 1
    s = json.loads((out / "summary.json").read_text())
    assert set(s) == {"scenario", "params", "metrics", "slopes", "passed", "wall_time"}
    assert s["passed"] is True
    assert all(set(m) == {"name", "value", "tolerance", "pass"} for m in s["metrics"])


def test_exit_one_on_tight_tolerance(tmp_path, capsys):
    cfg = write(tmp_path, "scenario = quantize-check\ntol_adjoint = 1e-300\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--quiet"]) == 1
    s = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert s["passed"] is False
    assert any(not m["pass"] and m["name"].startswith("adjoint") for m in s["metrics"])


def test_exit_two_on_config_error(tmp_path, capsys):
    cfg = write(tmp_path, "scenario = egorov\nn_x = 0\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "n_x must be positive, line 2" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_exit_two_on_bad_arguments(capsys):
    assert main(["run"]) == 2
    assert main(["frobnicate"]) == 2


def test_list_scenarios(capsys):
    assert main(["list-scenarios"]) == 0
    assert capsys.readouterr().out.split() == sorted(SCENARIOS)


def test_out_key_in_config(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    cfg = write(tmp_path, "scenario = dirac\nout = from-config\n")
    assert main(["run", "--config", str(cfg), "--quiet"]) == 0
    assert (tmp_path / "from-config" / "summary.json").exists()


@pytest.mark.parametrize("name", ["quantize-check.cfg", "sapt-mixed.cfg", "dirac.cfg"])
def test_deterministic_metrics(tmp_path, name):
    for k in (1, 2):
        assert main(["run", "--config", str(CONFIGS / name), "--out", str(tmp_path / f"r{k}"), "--quiet"]) == 0
    assert (tmp_path / "r1" / "metrics.csv").read_bytes() == (tmp_path / "r2" / "metrics.csv").read_bytes()


def test_threads_do_not_change_metrics(tmp_path, monkeypatch):
    cfg = parse_config(CONFIGS / "dirac.cfg")
    run_scenario(cfg, tmp_path / "serial")
    monkeypatch.setenv("WEYLLAB_THREADS", "3")
    run_scenario(cfg, tmp_path / "threaded")
    assert (tmp_path / "serial" / "metrics.csv").read_bytes() == (tmp_path / "threaded" / "metrics.csv").read_bytes()


def test_slopes_reported(tmp_path):
    rep = run_scenario(parse_config(CONFIGS / "dirac.cfg"), tmp_path)
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["slopes"] and set(s["slopes"][0]) == {"name", "slope", "expected"}
    assert rep.passed


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "weyllab.cli", "list-scenarios"], capture_output=True, text=True)
    assert r.returncode == 0 and "bo-dynamics" in r.stdout
