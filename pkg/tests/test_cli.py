import json

import pytest
import yaml

from ftmas.cli import SCENARIOS, emit_plots, main, scenario_config
from ftmas.config import dump_config, format_mode, load_config, normalized, parse_mode
from ftmas.errors import ConfigError

SMALL = """\
version: 1
name: small
seed: 3
plant:
  A: [[-0.5, 1.0], [0.0, -1.0]]
  B: [[1.0, 0.0], [0.0, 1.0]]
  C: [[1.0, 0.0]]
  B_w: [[0.1], [0.2]]
leader:
  times: [0.0]
  speeds: [1.0]
  K0: [[-1.0, 0.0], [0.0, -1.0]]
  F0: [[0.5, 0.0], [0.0, 0.0]]
topology:
  n_followers: 2
  edges: [[0, 1]]
  pins: [0]
design:
  gamma: 5.0
  c2_scale: 1.0
  phi: 0.001
faults:
  - agent: 1
    t_f: 1.0
    t_r: 1.5
    modes: [healthy, outage]
sim:
  h: 0.001
  horizon: 3.0
  csv_stride: 10
  settle: 0.5
"""


@pytest.fixture
def small_file(tmp_path):
    p = tmp_path / "small.yaml"
    p.write_text(SMALL)
    return p


# -- configuration -----------------------------------------------------------------


def test_roundtrip_idempotent():
    cfg = load_config(SMALL)
    once = dump_config(cfg)
    assert normalized(load_config(once)) == normalized(cfg)
    assert dump_config(load_config(once)) == once


def test_defaults_fill_in():
    cfg = load_config("")
    assert cfg.plant.preset == "sentry"
    assert cfg.topology.n_followers == 5


def test_line_diagnostics():
    text = "version: 1\ndesign:\n  gamma: -1.0\n"
    with pytest.raises(ConfigError) as exc:
        load_config(text)
    where = [w for w, _ in exc.value.diagnostics]
    assert any(w.startswith("line 3") and "design.gamma" in w for w in where)


@pytest.mark.parametrize("text", [
    "version: 2\n",
    "version: 1\nbogus: 1\n",
    "version: 1\nfaults:\n  - {agent: 9, t_f: 1.0, modes: [outage]}\n",
    "version: 1\nfaults:\n  - {agent: 0, t_f: 5.0, t_r: 1.0, modes: [outage]}\n",
    "version: 1\nfaults:\n  - {agent: 0, t_f: 1.0, modes: [loe:1.5]}\n",
    "version: 1\ndesign: [1, 2\n",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        load_config(text)


def test_overrides():
    cfg = load_config(SMALL, ["design.gamma=7", "faults.0.t_f=0.5", "topology.edges=[[1, 0]]"], seed=11)
    assert cfg.design.gamma == 7.0
    assert cfg.faults[0].t_f == 0.5
    assert cfg.topology.edges == [(1, 0)]
    assert cfg.seed == 11
    with pytest.raises(ConfigError):
        load_config(SMALL, ["design.gamma"])


@pytest.mark.parametrize("text", ["healthy", "outage", "loe:0.7", "stuck:1.0", "stuck"])
def test_mode_roundtrip(text):
    assert format_mode(parse_mode(text)) == text


def test_scenario_presets_are_valid():
    for key in SCENARIOS:
        cfg = load_config(yaml.safe_dump(scenario_config(key)))
        assert cfg.faults


def test_false_alarm_preset():
    cfg = load_config(yaml.safe_dump(scenario_config("4.1")))
    spec = cfg.fault_specs()[0]
    assert not spec.is_faulty
    assert any(m.kind != "healthy" for m in spec.reported)


# -- commands ---------------------------------------------------------------------------


def test_simulate_command(small_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["simulate", "--config", str(small_file), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["metrics"]["diverged"] == {"0": None, "1": None}
    assert "1" in summary["reconfig"]
    assert (out / "trace.csv").read_text().startswith("t,leader_s0")
    assert sorted(p.name for p in out.glob("plot_*.py")) == ["plot_trace_s0.py", "plot_trace_s1.py"]
    assert json.loads(capsys.readouterr().out)["stable"] is True


def test_synthesize_command(small_file, tmp_path):
    out = tmp_path / "syn"
    assert main(["synthesize", "--config", str(small_file), "--out", str(out)]) == 0
    rep = json.loads((out / "synthesis.json").read_text())
    assert rep["healthy"]["certificate"]["riccati_lambda_max"] < 0
    assert rep["reconfig"]["1"]["robustness"]["samples_hurwitz"] == 20


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("version: 1\nsim:\n  h: -1\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "line 3" in capsys.readouterr().err


def test_scenario_equals_simulate_on_preset(tmp_path):
    over = ["--set", "sim.horizon=26", "--set", "sim.h=0.001"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["scenario", "1", "--out", str(a)] + over) == 0
    preset = a / "scenario_1.yaml"
    assert main(["simulate", "--config", str(preset), "--out", str(b)] + over) == 0
    assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()
    names = sorted(p.name for p in a.glob("plot_*.py"))
    assert names == [f"plot_trace_{s}.py" for s in sorted(["surge", "sway", "yaw_rate", "yaw"])]


def test_sweep_command(small_file, tmp_path):
    doc = yaml.safe_load(SMALL)
    doc["sweep"] = {"key": "faults.0.estimated", "values": [["healthy", "outage"], ["healthy", "loe:0.5"]]}
    p = tmp_path / "sweep.yaml"
    p.write_text(yaml.safe_dump(doc))
    out = tmp_path / "sw"
    assert main(["sweep", "--config", str(p), "--out", str(out)]) == 0
    rows = json.loads((out / "sweep.json").read_text())["rows"]
    assert len(rows) == 2
    assert [q.name for q in out.glob("plot_*.py")] == ["plot_sweep_stability.py"]


def test_emit_plots_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        emit_plots([], tmp_path)
    with pytest.raises(FileNotFoundError):
        emit_plots([tmp_path / "missing.csv"], tmp_path)


def test_plot_script_compiles(small_file, tmp_path):
    out = tmp_path / "run"
    main(["simulate", "--config", str(small_file), "--out", str(out)])
    for script in out.glob("plot_*.py"):
        compile(script.read_text(), str(script), "exec")
