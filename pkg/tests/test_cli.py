import json
import os
import subprocess
import sys

import pytest

from netlasso.harness.cli import main

DATA = os.path.join(os.path.dirname(__file__), "data")
TINY = os.path.join(DATA, "tiny.toml")

DIVERGE = """
name = "diverge"
reference = false
[[cases]]
label = "c"
topology = "complete"
r = 1e20
[cases.model]
d = 30
s = 3
m = 4
n = 10
[[cases.algorithms]]
algorithm = "dgd"
T = 300
gamma = 50.0
"""


def test_run_config(tmp_path, capsys):
    assert main(["run", TINY, "--out", str(tmp_path), "--trials", "1"]) == 0
    assert (tmp_path / "traces.csv").exists()
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["trials"] == 1
    assert str(tmp_path) in capsys.readouterr().out


def test_seed_override(tmp_path):
    assert main(["run", TINY, "--out", str(tmp_path), "--seed", "11", "--trials", "1"]) == 0
    assert json.loads((tmp_path / "metadata.json").read_text())["base_seed"] == 11


def test_env_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("NETLASSO_OUT_DIR", str(tmp_path / "env"))
    monkeypatch.setenv("NETLASSO_WORKERS", "2")
    assert main(["run", TINY, "--trials", "2"]) == 0
    meta = json.loads((tmp_path / "env" / "metadata.json").read_text())
    assert meta["config"]["workers"] == 2


def test_run_preset_round_table(tmp_path):
    assert main(["run", "P6_round_table", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "rounds.csv").exists()


def test_unknown_source_exit_2(tmp_path, capsys):
    assert main(["run", "no_such_thing", "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_invalid_config_exit_2(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("name = 'x'\ntrials = 0\n[rounds]\n")
    assert main(["run", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_usage_error_exit_2():
    assert main(["frobnicate"]) == 2
    assert main(["rounds", "line"]) == 2


def test_divergence_exit_3(tmp_path):
    cfg = tmp_path / "div.toml"
    cfg.write_text(DIVERGE)
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 3


def test_rounds(capsys):
    assert main(["rounds", "erdos_renyi", "50", "metropolis"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert abs(out["rounds"] - 18) <= 2
    assert out["target"] == pytest.approx(50.0**-8)
    assert out["chebyshev_rounds"] <= out["rounds"]


def test_rounds_target(capsys):
    assert main(["rounds", "line", "3", "lazy_metropolis", "--target", "0.5"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["rho"] == pytest.approx(0.75)
    assert out["rounds"] == 3


def test_rounds_invalid(capsys):
    assert main(["rounds", "grid2d", "10", "metropolis"]) == 2
    assert main(["rounds", "line", "10", "metropolis", "--target", "2"]) == 2


def test_probe(capsys):
    assert main(["probe-rsc", TINY, "--n-dirs", "40"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["n_dirs"] == 40
    assert 0 <= out["satisfaction_fraction"] <= 1


def test_probe_needs_cases():
    assert main(["probe-rsc", "P6_round_table"]) == 2


def test_console_script(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "netlasso.harness.cli", "rounds", "complete", "5",
                           "uniform_complete"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["rounds"] == 1
