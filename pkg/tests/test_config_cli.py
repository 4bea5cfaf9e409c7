import json
import subprocess
import sys
from pathlib import Path

import pytest

from phasecalc import config as cfgmod
from phasecalc.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def run_cli(*args):
    return main([str(a) for a in args])


def test_even_N_diagnostic():
    cfg = cfgmod.from_dict({"command": "moyal-scan", "mode": "quantization", "N": 64})
    assert "N must be odd" in cfgmod.validate(cfg)


def test_partition_window_diagnostic():
    cfg = cfgmod.from_dict({"command": "partition-audit", "hbar": 0.05, "tau": 1.5})
    diags = cfgmod.validate(cfg)
    assert len(diags) == 1 and "T_E/2" in diags[0] and "0.88958" in diags[0]


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    assert cfgmod.validate(cfgmod.load(path)) == []


def test_aggregated_diagnostics():
    cfg = cfgmod.from_dict({"command": "egorov-scan", "mode": "fast", "N": 10, "hbar": -1, "hbar_list": [0.1],
                            "tol_slope": 0})
    diags = cfgmod.validate(cfg)
    assert len(diags) == 5
    assert cfgmod.validate(cfgmod.from_dict({"command": "frobnicate"}))[0].startswith("unknown command")


def test_nested_tables_rejected(tmp_path):
    p = write(tmp_path, 'command = "assumptions"\n[extra]\nx = 1\n')
    with pytest.raises(cfgmod.ConfigError, match="nested"):
        cfgmod.load(p)
    assert run_cli("run", "--config", p, "--out", tmp_path / "o") == 2
    err = json.loads((tmp_path / "o" / "error.json").read_text())
    assert err["status"] == "config_error" and err["exit_code"] == 2


def test_validate_command_exit_codes(tmp_path, capsys):
    assert run_cli("validate", "--config", CONFIGS / "a01_quantization.toml") == 0
    assert json.loads(capsys.readouterr().out)["diagnostics"] == []
    bad = write(tmp_path, 'command = "moyal-scan"\nmode = "quantization"\nN = 64\n')
    assert run_cli("validate", "--config", bad) == 2
    assert "N must be odd" in capsys.readouterr().out


def test_subcommand_must_match_config(tmp_path):
    assert run_cli("egorov-scan", "--config", CONFIGS / "a01_quantization.toml", "--out", tmp_path) == 2


def test_run_writes_manifest_and_csv(tmp_path):
    out = tmp_path / "q"
    assert run_cli("moyal-scan", "--config", CONFIGS / "a01_quantization.toml", "--out", out) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["passed"] and man["schema_version"] == cfgmod.SCHEMA_VERSION
    assert man["config"]["command"] == "moyal-scan" and man["engine"]["name"] == "phasecalc"
    assert {a["name"] for a in man["assertions"]} and all(a["passed"] for a in man["assertions"])
    assert set(man["outputs"]) == {p.name for p in out.glob("*.csv")}


def test_assertion_failure_exit_code(tmp_path):
    text = (CONFIGS / "a01_quantization.toml").read_text().replace("tol_roundtrip = 1e-12", "tol_roundtrip = 1e-30")
    out = tmp_path / "f"
    assert run_cli("run", "--config", write(tmp_path, text), "--out", out) == 1
    err = json.loads((out / "error.json").read_text())
    assert err["status"] == "assertion_failure" and any("roundtrip" in d for d in err["diagnostics"])
    assert not json.loads((out / "manifest.json").read_text())["passed"]


def test_divergence_exit_code(tmp_path):
    # V = x^2/2 - 2 x^4 is unbounded below: trajectories escape in finite time
    p = write(tmp_path, 'command = "flow-audit"\neps = -2.0\ntimes = [0.5, 3.0]\n')
    out = tmp_path / "d"
    assert run_cli("run", "--config", p, "--out", out) == 3
    assert json.loads((out / "error.json").read_text())["status"] == "numerical_divergence"


def test_beals_fefferman_gain_in_manifest(tmp_path):
    out = tmp_path / "bf"
    assert run_cli("metric-report", "--config", CONFIGS / "a03_gains.toml", "--out", out) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["summary"]["h_beals_fefferman"] == pytest.approx(1 / 6, rel=1e-12)


def test_harmonic_floor_exits_zero(tmp_path):
    out = tmp_path / "h"
    assert run_cli("egorov-scan", "--config", CONFIGS / "harmonic_floor.toml", "--out", out) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["summary"]["slopes"] and man["passed"]


def test_determinism_across_runs_and_jobs(tmp_path):
    cfg = CONFIGS / "harmonic_floor.toml"
    outs = []
    for k, jobs in enumerate((1, 1, 2)):
        o = tmp_path / f"r{k}"
        assert run_cli("run", "--config", cfg, "--out", o, "--jobs", jobs) == 0
        outs.append(o)
    for name in ("egorov_orders.csv",):
        data = [(o / name).read_bytes() for o in outs]
        assert data[0] == data[1] == data[2]


def test_seed_override(tmp_path, monkeypatch):
    cfg = CONFIGS / "a02_isometry.toml"
    monkeypatch.setenv(cfgmod.SEED_ENV, "1234")
    assert run_cli("run", "--config", cfg, "--out", tmp_path / "a") == 0
    assert run_cli("run", "--config", cfg, "--out", tmp_path / "b") == 0
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["config"]["seed"] == 1234
    assert (tmp_path / "a" / "isometry.csv").read_bytes() == (tmp_path / "b" / "isometry.csv").read_bytes()
    monkeypatch.setenv(cfgmod.SEED_ENV, "99")
    assert run_cli("run", "--config", cfg, "--out", tmp_path / "c") == 0
    assert (tmp_path / "a" / "isometry.csv").read_bytes() != (tmp_path / "c" / "isometry.csv").read_bytes()
    monkeypatch.setenv(cfgmod.SEED_ENV, "abc")
    assert run_cli("run", "--config", cfg, "--out", tmp_path / "e") == 2


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "phasecalc", "validate", "--config", str(CONFIGS / "a04_chain.toml")],
                       capture_output=True, text=True)
    assert r.returncode == 0
    r = subprocess.run([sys.executable, "-m", "phasecalc", "run", "--config", str(CONFIGS / "a01_quantization.toml"),
                        "--jobs", "0"], capture_output=True, text=True)
    assert r.returncode == 2
