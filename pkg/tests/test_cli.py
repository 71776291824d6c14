import filecmp
import re
import subprocess
import sys
from pathlib import Path

import pytest

from hjens.cli import main

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = sorted((ROOT / "configs").glob("*.ini"))
RUNNABLE = [c for c in CONFIGS if c.stem != "eulerian_rest_caustic"]


def command_for(path):
    return path.stem.split("_")[0]


def test_no_command_prints_usage(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().err


def test_missing_config_is_a_configuration_error(capsys):
    assert main(["eulerian"]) == 2
    err = capsys.readouterr().err
    assert "usage: hjens eulerian" in err and "--config" in err


def test_unreadable_config(tmp_path, capsys):
    assert main(["lagrangian", "--config", str(tmp_path / "none.ini")]) == 2
    assert "cannot read" in capsys.readouterr().err


def test_bad_config_line_reported(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text("[model]\nname = harmonic_oscillator\n[time]\ndt = zero\nt_end = 1\n")
    assert main(["lagrangian", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert "line 4" in capsys.readouterr().err


def test_caustic_run_exits_3_with_time(tmp_path, capsys):
    code = main(["eulerian", "--config", str(ROOT / "configs" / "eulerian_rest_caustic.ini"),
                 "--out", str(tmp_path), "--quiet"])
    assert code == 3
    err = capsys.readouterr().err
    m = re.search(r"t\s*=\s*([0-9.]+)", err)
    assert m, err
    assert abs(float(m.group(1)) - 1.5708) < 0.05


@pytest.mark.parametrize("config", RUNNABLE, ids=lambda p: p.stem)
def test_shipped_configs_run(config, tmp_path):
    assert main([command_for(config), "--config", str(config), "--out", str(tmp_path), "--quiet"]) == 0
    assert any(tmp_path.iterdir())


@pytest.mark.parametrize("config", RUNNABLE,
                         ids=lambda p: p.stem)
def test_runs_are_deterministic(config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main([command_for(config), "--config", str(config), "--out", str(out), "--quiet", "--seed", "3"]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    assert not mismatch and not errors


def test_module_entry_point(tmp_path):
    cfg = ROOT / "configs" / "lagrangian_oscillator.ini"
    r = subprocess.run([sys.executable, "-m", "hjens", "lagrangian", "--config", str(cfg), "--out", str(tmp_path)],
                       capture_output=True, text=True, cwd=ROOT, env={"PYTHONPATH": str(ROOT / "src")})
    assert r.returncode == 0, r.stderr


def test_verify_passes_on_defaults(capsys):
    assert main(["verify", "--quiet"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") >= 11
