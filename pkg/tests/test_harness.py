from __future__ import annotations

import csv
import json
from pathlib import Path

import pytest

from xdrive import harness
from xdrive.harness import RunConfig, load_logs, run_episode
from xdrive.report import build_report
from xdrive.reports import STAGES
from xdrive.trace import TERMINAL_CAUSES, read_log

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def test_episode_is_deterministic(tmp_path):
    a = run_episode(RunConfig("pedestrian_crossing", out_dir=str(tmp_path / "a")))
    b = run_episode(RunConfig("pedestrian_crossing", out_dir=str(tmp_path / "b")))
    assert a.path.read_bytes() == b.path.read_bytes()


def test_log_holds_every_stage_of_every_tick(episode_cache):
    ep = episode_cache("junction_turn", "oracle")
    assert ep.ticks
    for tk in ep.ticks:
        assert tk["status"] == "ok"
        assert [s["stage"] for s in tk["stages"]] == list(STAGES)
        decision = tk["stages"][STAGES.index("decision")]["prompt"]
        for stage in ("objects", "light", "sign", "lane"):
            assert f"{stage} report:" in decision


def test_ticks_are_contiguous_and_terminal_known(episode_cache):
    ep = episode_cache("red_light_approach", "oracle")
    dt = ep.header["dt"]
    assert [tk["tick"] for tk in ep.ticks] == list(range(len(ep.ticks)))
    assert all(tk["t"] == pytest.approx(k * dt) for k, tk in enumerate(ep.ticks))
    assert ep.terminal in TERMINAL_CAUSES
    assert ep.end["ticks"] == len(ep.ticks)


def test_log_round_trips_through_reader(tmp_path):
    ep = run_episode(RunConfig("default_driving", out_dir=str(tmp_path)))
    again = read_log(ep.path)
    assert again.header == ep.header and again.end == ep.end
    assert again.ticks == ep.ticks


def test_trajectory_csv_and_tick_cap(tmp_path):
    ep = run_episode(RunConfig("default_driving", out_dir=str(tmp_path), ticks_max=5))
    assert ep.terminal == "timeout" and len(ep.ticks) == 5
    rows = list(csv.reader((tmp_path / "default_driving__oracle.trajectory.csv").open()))
    assert rows[0][:5] == ["t", "x", "y", "heading", "speed"]
    assert len(rows) == 6


def test_oracle_clean_run(episode_cache):
    ep = episode_cache("default_driving", "oracle")
    assert ep.terminal == "destination" and ep.route_completion == pytest.approx(1.0)
    assert ep.infractions == []


def test_ablation_hits_the_pedestrian(episode_cache):
    ep = episode_cache("pedestrian_crossing", "no-cot")
    assert ep.terminal == "fatal_collision"
    assert [e.kind for e in ep.infractions] == ["collision_pedestrian"]


def test_unknown_scenario(tmp_path):
    from xdrive.scenario import ScenarioError

    with pytest.raises(ScenarioError):
        run_episode(RunConfig("no_such_scenario", out_dir=str(tmp_path)))


def test_scenario_file_reference(tmp_path):
    ep = run_episode(RunConfig(str(SCENARIOS / "lead_vehicle_20m.scn"), out_dir=str(tmp_path)))
    assert ep.scenario == "lead_vehicle_20m" and ep.terminal == "destination"


def test_load_logs_requires_logs(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_logs(tmp_path)


def test_out_dir_from_environment(monkeypatch):
    monkeypatch.setenv("XDRIVE_OUT", "/tmp/elsewhere")
    assert harness.default_out_dir() == "/tmp/elsewhere"
    monkeypatch.delenv("XDRIVE_OUT")
    assert harness.default_out_dir() == "runs"


def test_oracle_report_is_perfect(tmp_path):
    for name in ("pedestrian_crossing", "lead_vehicle_20m"):
        run_episode(RunConfig(name, out_dir=str(tmp_path)))
    build_report(load_logs(tmp_path), tmp_path / "report", figures=False)
    (row,) = list(csv.DictReader((tmp_path / "report" / "detection.csv").open()))
    assert row["policy"] == "oracle"
    assert float(row["Precision"]) == 1.0 and float(row["Recall"]) == 1.0
    assert float(row["IoU(sample)"]) == 1.0
    (wp,) = list(csv.DictReader((tmp_path / "report" / "waypoints.csv").open()))
    assert float(wp["FDE"]) == 0.0


def test_every_record_is_versioned_json(tmp_path):
    ep = run_episode(RunConfig("exit_ramp", out_dir=str(tmp_path), ticks_max=3))
    kinds = []
    for line in ep.path.read_text().splitlines():
        rec = json.loads(line)
        assert rec["v"] == 1
        kinds.append(rec["type"])
    assert kinds == ["header", "tick", "tick", "tick", "end"]
