import json
import os
import shutil
import subprocess
import sys

import pytest

from exchcool.cli import EXIT_CONFIG, EXIT_OK, EXIT_SIM, main

SMALL = {"ensemble": {"n_energy": 2, "n_phase": 2},
         "compensation": {"on": {"E_c_V_per_m": 21.0}}}

RUNS = {
    "mode-freq": ["--d", "14,40,77,140"],
    "thermometry": [],
    "compensation-sweep": ["--E-c", "19,20,21", "--alpha-c", "1.33"],
    "tex-sweep": ["--t-ex", "0,3,6"],
    "cooling-curve": ["--nbar", "15,50"],
}
OUTPUTS = {"mode-freq": "mode_freq.csv", "thermometry": "thermometry.csv",
           "compensation-sweep": "compensation_sweep.csv", "tex-sweep": "tex_sweep.csv",
           "cooling-curve": "cooling_curve.csv"}


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "small.json"
    p.write_text(json.dumps(SMALL))
    return str(p)


@pytest.mark.parametrize("cmd", sorted(RUNS))
def test_byte_identical_reruns(cmd, cfg, tmp_path):
    outs = []
    for k in ("a", "b"):
        out = tmp_path / k
        assert main([cmd, "--config", cfg, "--out", str(out), "--seed", "5", *RUNS[cmd]]) == EXIT_OK
        outs.append((out / OUTPUTS[cmd]).read_bytes())
    assert outs[0] == outs[1]
    assert outs[0].splitlines()[0].endswith(b",config_hash")


def test_seed_changes_synthetic_thermometry(cfg, tmp_path):
    for s in ("1", "2"):
        assert main(["thermometry", "--config", cfg, "--out", str(tmp_path / s), "--seed", s]) == 0
    assert (tmp_path / "1" / "thermometry.csv").read_bytes() != \
        (tmp_path / "2" / "thermometry.csv").read_bytes()


def test_dry_run_prints_si_plan(cfg, tmp_path, capsys):
    out = tmp_path / "never"
    assert main(["tex-sweep", "--config", cfg, "--out", str(out), "--dry-run", "--t-ex", "1,2"]) == 0
    plan = json.loads(capsys.readouterr().out)
    assert plan["command"] == "tex-sweep"
    assert plan["axes"]["t_ex_s"] == pytest.approx([1e-6, 2e-6])
    assert plan["d_in_m"] == pytest.approx(14e-6)
    assert not out.exists()


def test_bad_config_reports_line(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "ensemble": {\n    "n_bogus": 1\n  }\n}')
    assert main(["mode-freq", "--config", str(p), "--dry-run"]) == EXIT_CONFIG
    assert f"{p}:3" in capsys.readouterr().err


def test_missing_config_is_config_error(tmp_path):
    assert main(["mode-freq", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG


def test_usage_errors():
    assert main([]) == EXIT_CONFIG
    assert main(["no-such-command"]) == EXIT_CONFIG
    assert main(["mode-freq", "--d", "a,b"]) == EXIT_CONFIG


def test_help_exits_zero(capsys):
    assert main(["--help"]) == EXIT_OK


def test_empty_flop_csv(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("t_us,P_S,sigma_P\n")
    assert main(["thermometry", "--flop-csv", str(p), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_flat_flop_csv_is_simulation_failure(tmp_path):
    p = tmp_path / "flat.csv"
    p.write_text("t_us,P_S,sigma_P\n" + "".join(f"{t},0.5,0.035\n" for t in range(1, 30)))
    assert main(["thermometry", "--flop-csv", str(p), "--out", str(tmp_path / "o")]) == EXIT_SIM


def test_flop_csv_with_sbr(cfg, tmp_path):
    assert main(["thermometry", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    flop = tmp_path / "s" / "flop_post.csv"
    assert flop.exists()
    out = tmp_path / "o"
    assert main(["thermometry", "--flop-csv", str(flop), "--sbr", "40", "110", "200",
                 "--out", str(out)]) == 0
    row = (out / "thermometry.csv").read_text().splitlines()[1].split(",")
    assert row[0] == "input" and row[5] != ""


def test_console_script(tmp_path):
    exe = shutil.which("exchcool")
    cmd = [exe] if exe else [sys.executable, "-m", "exchcool.cli"]
    r = subprocess.run([*cmd, "mode-freq", "--dry-run"], capture_output=True, text=True,
                       env=dict(os.environ), cwd=tmp_path)
    assert r.returncode == 0
    assert json.loads(r.stdout)["command"] == "mode-freq"
