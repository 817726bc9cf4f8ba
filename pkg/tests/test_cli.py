import json
import subprocess
import sys

import pytest

from timebin.cli import main
from timebin.scenarios import PRESETS
from timebin.tagio import read_tags


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_simulate_is_byte_deterministic(tmp_path):
    args = ["simulate", "--scenario", "back_to_back", "--seed", "7", "--duration", "0.02"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    fa, fb = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert fa == fb
    assert {"ch0.ttg", "ch1.ttg", "manifest.json", "analysis.json", "histogram.csv"} <= set(fa)
    m = json.loads(fa["manifest.json"])
    assert m["seed"] == 7 and m["scenario"]["run"]["seed"] == 7
    assert read_tags(tmp_path / "a" / "ch0.ttg").channels() == [0]


def test_manifest_replays_run(tmp_path):
    assert main(["simulate", "--scenario", "back_to_back", "--seed", "3", "--duration", "0.01",
                 "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", "--config", str(tmp_path / "a" / "manifest.json"),
                 "--out", str(tmp_path / "b")]) == 0
    assert _files(tmp_path / "a") == _files(tmp_path / "b")


def test_vienna_manifest_loss(tmp_path):
    assert main(["simulate", "--scenario", "vienna_link", "--duration", "0.001", "--out", str(tmp_path)]) == 0
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["detector_path_loss_dB"] == pytest.approx(9.5 + 2.9 + 3.0, abs=0.02)


def test_unknown_scenario_exit_code(capsys):
    assert main(["simulate", "--scenario", "nope"]) == 2
    err = capsys.readouterr().err
    assert all(name in err for name in PRESETS)


def test_bad_config_names_key(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("preset: back_to_back\nrun:\n  link:\n    loss_dB: -3\n")
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert "run.link.loss_dB" in capsys.readouterr().err


def test_usage_errors_exit_two():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_analyze_matches_simulate_and_csv(tmp_path):
    assert main(["simulate", "--scenario", "back_to_back", "--duration", "0.02",
                 "--out", str(tmp_path / "s")]) == 0
    assert main(["simulate", "--scenario", "back_to_back", "--duration", "0.02", "--tags", "csv",
                 "--out", str(tmp_path / "c")]) == 0
    s = tmp_path / "s"
    assert main(["analyze", str(s / "ch0.ttg"), str(s / "ch1.ttg"), "--scenario", "back_to_back",
                 "--out", str(tmp_path / "a1")]) == 0
    c = tmp_path / "c"
    assert main(["analyze", str(c / "ch0.csv"), str(c / "ch1.csv"), "--scenario", "back_to_back",
                 "--out", str(tmp_path / "a2")]) == 0
    for name in ("analysis.json", "histogram.csv"):
        ref = (s / name).read_bytes()
        assert (tmp_path / "a1" / name).read_bytes() == ref
        assert (tmp_path / "a2" / name).read_bytes() == ref


def test_analyze_truncated_file(tmp_path, capsys):
    p = tmp_path / "x.ttg"
    p.write_bytes(b"TTG1\x00\x00")
    assert main(["analyze", str(p), "--out", str(tmp_path)]) == 1
    assert "byte offset 6" in capsys.readouterr().err


def test_sweep_phase_outputs(tmp_path):
    assert main(["sweep-phase", "--scenario", "back_to_back", "--duration", "0.01",
                 "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "fringe.csv").read_text().splitlines()
    assert rows[0] == "heater_mW,phase_rad,center_counts,side_counts" and len(rows) == 12
    summary = json.loads((tmp_path / "fringe.json").read_text())
    assert summary["fit"]["ok"] is True and summary["raw_visibility"] > 0.8


def test_sweep_phase_fit_failure_keeps_partial_csv(tmp_path):
    # far too little data for a fringe: the fit fails, the CSV is still written
    assert main(["sweep-phase", "--scenario", "back_to_back", "--grid", "0,1,2,3,4",
                 "--duration", "0.000001", "--out", str(tmp_path)]) == 0
    assert len((tmp_path / "fringe.csv").read_text().splitlines()) == 6
    assert json.loads((tmp_path / "fringe.json").read_text())["fit"]["ok"] is False


def test_sweep_phase_too_few_points(tmp_path):
    assert main(["sweep-phase", "--scenario", "back_to_back", "--grid", "0,1,2",
                 "--out", str(tmp_path)]) == 2


def test_sweep_power_outputs(tmp_path):
    assert main(["sweep-power", "--scenario", "car_bench", "--grid", "0.1,0.2", "--duration", "0.01",
                 "--format", "json", "--out", str(tmp_path)]) == 0
    pts = json.loads((tmp_path / "power.json").read_text())
    assert [p["power_mW"] for p in pts] == [0.1, 0.2]
    assert main(["sweep-power", "--scenario", "car_bench", "--grid", "0.1,-1", "--out", str(tmp_path)]) == 2


def test_oracle_check(tmp_path, capsys):
    assert main(["oracle-check", "--pulses", "4", "--samples", "50000", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "oracle.json").read_text())
    assert rep["passed"] and len(rep["settings"]) == 4
    assert main(["oracle-check", "--pulses", "21", "--out", str(tmp_path)]) == 2


def test_report_two_receiver(tmp_path):
    assert main(["report", "--scenario", "two_receiver", "--duration", "0.05", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "qkd.json").read_text())
    assert rep["phase_bits"] > 0 and rep["entangled"] is True
    n = (tmp_path / "alice_phase.bits").stat().st_size
    assert n == (tmp_path / "bob_phase.bits").stat().st_size == rep["phase_bits"]


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "timebin", "simulate", "--scenario", "nope"],
                         capture_output=True, text=True)
    assert out.returncode == 2 and "back_to_back" in out.stderr
