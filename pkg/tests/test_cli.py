import json
import subprocess
from pathlib import Path

import pytest

from saccades.cli import main

SMOKE = Path(__file__).parent.parent / "configs" / "smoke.toml"
COMMANDS = ["gen-data", "train-classifier", "train-saccade", "eval-classify", "eval-saccade", "eval-track",
            "mask-demo"]


def _run(tmp_path, command, *extra, config=SMOKE):
    return main([command, str(config), "--output", str(tmp_path), *extra])


def test_usage_errors(capsys):
    assert main([]) == 1
    assert main(["fly", str(SMOKE)]) == 1
    assert main(["gen-data", str(SMOKE), "--frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = 1\n[policy]\nbudget = 'x'\n")
    assert main(["gen-data", str(bad)]) == 2
    assert "line 3" in capsys.readouterr().err
    assert _run(tmp_path, "gen-data", "--set", "policy.name=psychic") == 2
    assert main(["gen-data", str(tmp_path / "absent.toml")]) == 2


def test_runtime_error_for_missing_dataset(tmp_path, capsys):
    assert _run(tmp_path, "eval-classify", "--set", f"dataset.path='{tmp_path / 'nowhere'}'") == 3
    assert "dataset.json" in capsys.readouterr().err


@pytest.mark.parametrize("command", COMMANDS)
def test_manifest_lists_every_output(tmp_path, command):
    assert _run(tmp_path, command) == 0
    out = tmp_path / command
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == command and manifest["seed"] == 7 and manifest["version"]
    assert manifest["config"]["seed"] == 7
    written = sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    assert written == manifest["outputs"]


@pytest.mark.parametrize("command", ["eval-classify", "eval-saccade", "eval-track", "train-classifier"])
def test_repeat_runs_give_identical_csvs(tmp_path, command):
    assert _run(tmp_path / "a", command) == 0
    assert _run(tmp_path / "b", command) == 0
    a = sorted((tmp_path / "a" / command).rglob("*.csv"))
    assert a
    for p in a:
        q = tmp_path / "b" / command / p.relative_to(tmp_path / "a" / command)
        assert p.read_bytes() == q.read_bytes(), p.name


def test_gen_data_then_oracle_sweep(tmp_path):
    assert _run(tmp_path, "gen-data") == 0
    budgets = "[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]"
    assert _run(tmp_path, "eval-classify", "--set", f"dataset.path='{tmp_path / 'gen-data' / 'dataset'}'",
                "--set", "policy.policies=['oracle']", "--set", f"policy.budgets={budgets}") == 0
    lines = (tmp_path / "eval-classify" / "accuracy_oracle_smoke_s7.csv").read_text().splitlines()
    assert lines[0] == "axis,value" and len(lines) == 11


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv("SACCADES_OUTPUT_ROOT", str(tmp_path))
    assert main(["gen-data", str(SMOKE), "--set", "output_dir='rel'"]) == 0
    assert (tmp_path / "rel" / "gen-data" / "manifest.json").exists()


def test_console_script_exit_code():
    proc = subprocess.run(["saccades", "nonsense"], capture_output=True, text=True)
    assert proc.returncode == 1 and "usage" in proc.stderr
