import csv
import io
import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from dectrack.cli import main
from dectrack.config import (ConfigError, ScenarioConfig, bundled_scenarios, from_dict,
                             load_bundled, to_dict)
from dectrack.runner import csv_text, run_centralized, run_scenario, run_sweep, summary, write_outputs
from dectrack.sim import InitialDisconnection, Simulation, stream

GOLDEN = Path(__file__).parent / "golden"
SHORT = ScenarioConfig(steps=4)


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="planner"):
        from_dict({"planner": {"q3": 1.0}})
    with pytest.raises(ConfigError):
        from_dict({"colour": "red"})


@pytest.mark.parametrize("bad", [
    {"n_robots": 0},
    {"planner": {"q1": -1.0}},
    {"planner": {"rho1": [0.1, 0.1]}},
    {"sensors": {"gain": [1.0]}},
    {"failures": {"scripted": [[3, 7, 0]]}},
    {"mode": "hybrid"},
    {"targets": {"radii": [1.0]}},
])
def test_invalid_values_rejected(bad):
    with pytest.raises(ConfigError):
        from_dict(bad)


def test_roundtrip_and_dotted_replace():
    cfg = ScenarioConfig()
    assert from_dict(to_dict(cfg)) == cfg
    c2 = cfg.replace(**{"planner.q1": 2.5, "steps": 7})
    assert c2.planner.q1 == 2.5 and c2.steps == 7


def test_bundled_scenarios_carry_quoted_parameters():
    assert set(bundled_scenarios()) >= {"risk_3v3", "traj_5v4_r11", "traj_5v4_r7", "compare_4v4"}
    for r in (7.0, 11.0):
        c = load_bundled(f"traj_5v4_r{int(r)}")
        assert (c.n_robots, c.n_targets, c.comm.r_comm) == (5, 4, r)
        assert (c.planner.q1, c.planner.q2, c.planner.rho2, c.control.epsilon) == (3.0, 20.0, 0.15, 0.25)
        assert c.planner.rho1 == (0.001,) * 4
    c = load_bundled("risk_3v3")
    assert (c.n_robots, c.n_targets, c.comm.r_comm) == (3, 3, 18.0)
    assert (c.planner.q1, c.planner.q2, c.planner.rho2, c.planner.rho1) == (1.0, 10.0, 0.33, (0.01,) * 3)
    c = load_bundled("compare_4v4")
    assert (c.n_robots, c.n_targets, c.steps) == (4, 4, 50)
    assert c.failures.scripted == ((20, 0, 2), (35, 1, 1)) and not c.failures.random


def test_csv_columns_match_golden():
    header = csv_text(run_scenario(SHORT, 0, steps=0)).splitlines()[0]
    assert header == (GOLDEN / "columns_3x3.csv").read_text().strip()


def test_zero_steps_gives_header_only_and_initial_state():
    res = run_scenario(SHORT, 0, steps=0)
    assert csv_text(res).count("\n") == 1
    s = summary(res)
    assert s["steps"] == 0 and len(s["initial"]["positions"]) == 3 and "final" not in s


def test_same_seed_is_bit_identical():
    assert csv_text(run_scenario(SHORT, 5)) == csv_text(run_scenario(SHORT, 5))
    assert csv_text(run_scenario(SHORT, 5)) != csv_text(run_scenario(SHORT, 6))


def test_record_contents():
    res = run_scenario(SHORT, 1)
    rows = list(csv.DictReader(io.StringIO(csv_text(res))))
    assert [int(r["t"]) for r in rows] == [1, 2, 3, 4]
    for rec in res.records:
        assert rec.positions.shape == (3, 2) and rec.rmse.shape == (3,)
        assert rec.msg_count > 0 and rec.lambda2_true > 0
    assert res.records[-1].msg_count == int(rows[-1]["msg_count"])
    assert summary(res)["messages"]["count"] == sum(r.msg_count for r in res.records)


def test_scripted_margin_drops_exactly_on_schedule():
    cfg = load_bundled("compare_4v4")
    res = run_scenario(cfg, 0, steps=36)
    eta = np.array([r.eta.mean() for r in res.records])
    t = np.array([r.t for r in res.records])
    drops = t[1:][np.diff(eta) < 0]
    assert list(drops) == [20, 35]
    assert eta[t == 19][0] == 5.0 and eta[t == 20][0] == 4.5 and eta[t == 35][0] == 4.0
    assert res.records[-1].cum_failures == 2


def test_single_robot_modes_coincide():
    cfg = ScenarioConfig(n_robots=1, n_targets=2, steps=8)
    a, b = run_scenario(cfg, 2), run_centralized(cfg, 2)
    for ra, rb in zip(a.records, b.records):
        np.testing.assert_array_equal(ra.positions, rb.positions)
        np.testing.assert_array_equal(ra.trace_P, rb.trace_P)
    assert not any(r.cbf_fallback.any() for r in a.records)


def test_seed_streams_are_isolated():
    """Changing how failures happen leaves the target trajectory untouched."""
    a = Simulation(SHORT, 3)
    b = Simulation(replace(SHORT, failures=replace(SHORT.failures, gain=5.0)), 3)
    a.run(3)
    b.run(3)
    np.testing.assert_array_equal(a.targets.z, b.targets.z)
    r1, r2 = stream(3, "solver", 1, 0, 1), stream(3, "solver", 1, 0, 2)
    assert r1.random() != r2.random()


def test_initial_disconnection_raises():
    cfg = ScenarioConfig(robots=replace(ScenarioConfig().robots,
                                        initial_positions=((0, 0), (1, 0), (100, 0))))
    with pytest.raises(InitialDisconnection):
        Simulation(cfg, 0)


def test_sweep_rows():
    cfg = replace(SHORT, steps=3, sweep=replace(SHORT.sweep, tail_steps=2))
    rows = run_sweep(cfg, [0.5])
    assert len(rows) == 1 and rows[0]["eta"] == 0.5
    dup = run_sweep(cfg, [1.0, 1.0])
    assert dup[0] == dup[1]
    with pytest.raises(ValueError):
        run_sweep(cfg, [])


def test_outputs_written(tmp_path):
    res = run_scenario(SHORT, 0, steps=2, keep_messages=True)
    csv_path, json_path = write_outputs(res, tmp_path, messages=True)
    info = json.loads(Path(json_path).read_text())
    assert info["implementation_defaults"]["dt"] == 0.1
    assert info["final"]["cum_failures"] == res.records[-1].cum_failures
    lines = (tmp_path / f"{Path(csv_path).stem}_messages.jsonl").read_text().splitlines()
    assert len(lines) == res.log.count


def test_cli_run_and_errors(tmp_path, capsys):
    assert main(["run", "--config", "risk_3v3", "--steps", "2", "--seed", "4",
                 "--risk-aware", "false", "--out-dir", str(tmp_path)]) == 0
    out = json.loads((tmp_path / "risk_3v3_decentralized_seed4.json").read_text())
    assert out["risk_aware"] is False and out["steps"] == 2

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n_robots": 3, "whatever": 1}))
    assert main(["run", "--config", str(bad)]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    split = tmp_path / "split.json"
    split.write_text(json.dumps({"robots": {"initial_positions": [[0, 0], [1, 0], [90, 0]]}}))
    assert main(["run", "--config", str(split), "--out-dir", str(tmp_path)]) == 3
    assert "disconnected" in capsys.readouterr().err


def test_cli_sweep(tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--config", "risk_3v3", "--eta", "0.5,1.0", "--steps", "2",
                 "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert [float(r["eta"]) for r in rows] == [0.5, 1.0]
    assert main(["sweep", "--config", "risk_3v3", "--eta", "-1"]) == 2
