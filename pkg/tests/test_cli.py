import json
import subprocess
import sys

import pytest

from adaptsync.cli import EXIT_ASSUMPTION, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main, run_sweep, sweep_grid
from adaptsync.control import ConfigError

BROKEN = """
leader: {S: [[0, 1], [-1, 0]], F: [1, 0], v0: [1, 0], mu0: 10}
graphs: {G1: []}
schedule: {intervals: [[0, G1]]}
followers:
  - {order: 1, regressor: ["x1"], theta: [1.0]}
run: {step: 0.001, duration: 2}
"""


def files_in(d):
    return sorted(p.relative_to(d).as_posix() for p in d.rglob("*") if p.is_file())


@pytest.fixture(scope="module")
def theorem1_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["run", "--scenario", "theorem1_demo", "--out-dir", str(out)]) == EXIT_OK
    return out


def test_run_writes_artifacts(theorem1_run):
    names = files_in(theorem1_run)
    assert {"trace.csv", "summary.json", "timing.json", "plots/tracking_error.dat",
            "plots/V.dat", "plots/W.dat", "plots/e1_0.dat", "plots/Dhat4.dat"} <= set(names)
    summary = json.loads((theorem1_run / "summary.json").read_text())
    assert summary["converged"] is True
    assert summary["assumptions"]["all_pass"] is True
    header = (theorem1_run / "trace.csv").read_text().splitlines()[0].split(",")
    assert header[:6] == ["t", "graph", "y1", "e1_0", "s1", "ev1"]
    assert header[-2:] == ["V", "W"]
    plot = (theorem1_run / "plots" / "V.dat").read_text().splitlines()
    assert plot[0] == "# t value" and len(plot[1].split()) == 2


def test_run_output_is_byte_stable(theorem1_run, tmp_path):
    assert main(["run", "--scenario", "theorem1_demo", "--out-dir", str(tmp_path)]) == EXIT_OK
    for name in files_in(theorem1_run):
        if name == "timing.json":
            continue
        assert (theorem1_run / name).read_bytes() == (tmp_path / name).read_bytes(), name


def test_check_only_runs_no_simulation(tmp_path, capsys):
    assert main(["run", "--scenario", "theorem1_demo", "--check-only",
                 "--out-dir", str(tmp_path)]) == EXIT_OK
    assert "all assumptions pass" in capsys.readouterr().out
    assert files_in(tmp_path) == []


def test_check_command(capsys):
    assert main(["check", "--scenario", "static_demo"]) == EXIT_OK
    assert "joint connectivity: True" in capsys.readouterr().out


def test_exact_sign_run_reports_band(tmp_path):
    rc = main(["run", "--scenario", "disturbance_demo", "--mode", "disturbance_rejection",
               "--epsilon", "0", "--duration", "40", "--out-dir", str(tmp_path)])
    assert rc == EXIT_OK
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["epsilon"] == 0.0
    assert summary["residual_band"] > 0


def test_env_var_sets_default_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("ADAPTSYNC_OUT_DIR", str(tmp_path))
    assert main(["run", "--scenario", "static_demo", "--duration", "2"]) == EXIT_OK
    assert (tmp_path / "static_demo" / "trace.csv").is_file()


def test_failed_assumptions_exit_code(tmp_path, capsys):
    p = tmp_path / "broken.yaml"
    p.write_text(BROKEN)
    assert main(["check", "--scenario", str(p)]) == EXIT_ASSUMPTION
    assert main(["run", "--scenario", str(p), "--out-dir", str(tmp_path / "o")]) == EXIT_ASSUMPTION
    assert "joint connectivity" in capsys.readouterr().err
    assert main(["run", "--scenario", str(p), "--override-assumptions",
                 "--out-dir", str(tmp_path / "o")]) == EXIT_OK
    assert json.loads((tmp_path / "o" / "summary.json").read_text())["assumptions_overridden"]


@pytest.mark.parametrize("argv,msg", [
    (["run", "--scenario", "nope_demo"], "no scenario"),
    (["run", "--scenario", "theorem1_demo", "--step", "0.003"], "not a multiple"),
    (["sweep", "--scenario", "theorem1_demo"], "no parameters"),
])
def test_config_errors_exit_code(argv, msg, capsys, tmp_path):
    assert main(argv + ["--out-dir", str(tmp_path)]) == EXIT_CONFIG
    assert msg in capsys.readouterr().err


def test_sweep_grid_order():
    assert sweep_grid(k=[1.0, 2.0], epsilon=[0.1, 0.01]) == [
        {"k": 1.0, "epsilon": 0.1}, {"k": 1.0, "epsilon": 0.01},
        {"k": 2.0, "epsilon": 0.1}, {"k": 2.0, "epsilon": 0.01}]
    with pytest.raises(ConfigError, match="no parameters"):
        sweep_grid()


def test_sweep_rows_ordered_and_independent_of_workers():
    points = sweep_grid(k=[3.0, 1.0, 2.0])
    base = {"duration": 5.0}
    serial = run_sweep("theorem1_demo", points, base, workers=1)
    parallel = run_sweep("theorem1_demo", points, base, workers=2)
    assert [r["params"] for r in parallel] == points
    assert json.dumps(serial, sort_keys=True) == json.dumps(parallel, sort_keys=True)


def test_sweep_records_failures_and_continues(tmp_path, capsys):
    rc = main(["sweep", "--scenario", "theorem1_demo", "--step", "0.003", "0.001",
               "--duration", "5", "--workers", "1", "--out-dir", str(tmp_path)])
    assert rc == EXIT_RUNTIME
    rows = json.loads((tmp_path / "sweep.json").read_text())["points"]
    assert [r["ok"] for r in rows] == [False, True]
    assert "not a multiple" in rows[0]["error"]


def test_step_sweep_is_grid_independent(tmp_path):
    rc = main(["sweep", "--scenario", "theorem1_demo", "--step", "0.002", "0.001", "0.0005",
               "--out-dir", str(tmp_path)])
    assert rc == EXIT_OK
    rows = json.loads((tmp_path / "sweep.json").read_text())["points"]
    errs = [r["summary"]["terminal_max_error"] for r in rows]
    assert all(e < 1e-2 for e in errs)
    assert max(errs) - min(errs) < 1e-2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "adaptsync", "check", "--scenario",
                           "theorem1_demo"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "all assumptions pass" in proc.stdout
