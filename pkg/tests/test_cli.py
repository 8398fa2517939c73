from __future__ import annotations

import json

import pytest

from xdrive import cli
from xdrive.catalog import CATALOG_NAMES


def run(*argv) -> int:
    try:
        return cli.main(list(argv))
    except SystemExit as exc:
        return exc.code


def test_run_ok(tmp_path, capsys):
    assert run("run", "--scenario", "default_driving", "--out", str(tmp_path)) == cli.EXIT_OK
    assert "destination" in capsys.readouterr().out
    assert (tmp_path / "default_driving__oracle.jsonl").is_file()


@pytest.mark.parametrize(
    "argv",
    [
        ("run",),
        ("run", "--scenario", "default_driving", "--bogus"),
        ("run", "--scenario", "default_driving", "--policy", "remote"),
        ("run", "--scenario", "default_driving", "--policy", "telepathy"),
        (),
    ],
)
def test_usage_errors(argv, tmp_path):
    assert run(*argv, *(("--out", str(tmp_path)) if argv else ())) == cli.EXIT_USAGE


def test_unknown_config_key(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"scenario": "default_driving", "warp": 9}))
    assert run("run", "--config", str(conf)) == cli.EXIT_USAGE


def test_bad_scenario_file(tmp_path):
    bad = tmp_path / "bad.scn"
    bad.write_text("scenario broken\nthis is not a directive\n")
    assert run("run", "--scenario", str(bad), "--out", str(tmp_path)) == cli.EXIT_SCENARIO
    assert run("run", "--scenario", "nowhere", "--out", str(tmp_path)) == cli.EXIT_SCENARIO


def test_unreachable_remote_is_policy_failure(tmp_path):
    code = run(
        "run", "--scenario", "default_driving", "--policy", "remote",
        "--endpoint", "127.0.0.1:1", "--out", str(tmp_path),
    )
    assert code == cli.EXIT_POLICY
    end = json.loads((tmp_path / "default_driving__remote.jsonl").read_text().splitlines()[-1])
    assert end["terminal"] == "policy_failure"


def test_config_file_with_flags_winning(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"scenario": "default_driving", "ticks_max": 3, "out": str(tmp_path / "a")}))
    assert run("run", "--config", str(conf)) == cli.EXIT_OK
    log = (tmp_path / "a" / "default_driving__oracle.jsonl").read_text().splitlines()
    assert len(log) == 5
    assert run("run", "--config", str(conf), "--ticks-max", "2", "--out", str(tmp_path / "b")) == cli.EXIT_OK
    assert len((tmp_path / "b" / "default_driving__oracle.jsonl").read_text().splitlines()) == 4


def test_out_defaults_to_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("XDRIVE_OUT", str(tmp_path / "env"))
    assert run("run", "--scenario", "default_driving", "--ticks-max", "1") == cli.EXIT_OK
    assert (tmp_path / "env" / "default_driving__oracle.jsonl").is_file()


def test_catalog_lists_and_writes(tmp_path, capsys):
    assert run("catalog", "--write", str(tmp_path)) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert all(name in out for name in CATALOG_NAMES)
    assert sorted(p.stem for p in tmp_path.glob("*.scn")) == sorted(CATALOG_NAMES)


def test_report_writes_tables(tmp_path, capsys):
    run("run", "--scenario", "lead_vehicle_20m", "--out", str(tmp_path))
    assert run("report", "--logs", str(tmp_path), "--no-figures") == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "Driving Score" in out
    for name in ("report.txt", "detection.csv", "waypoints.csv", "closed_loop.csv", "episodes.csv"):
        assert (tmp_path / "report" / name).is_file()


def test_report_without_logs(tmp_path):
    assert run("report", "--logs", str(tmp_path / "empty")) == cli.EXIT_USAGE


def test_detection_range_flag(tmp_path):
    def first_objects(out):
        log = (out / "lead_vehicle_20m__oracle.jsonl").read_text().splitlines()
        return json.loads(log[1])["stages"][0]["output"]

    assert run("run", "--scenario", "lead_vehicle_20m", "--ticks-max", "1", "--out", str(tmp_path / "far")) == 0
    assert run(
        "run", "--scenario", "lead_vehicle_20m", "--ticks-max", "1", "--detection-range", "5",
        "--out", str(tmp_path / "near"),
    ) == 0
    assert first_objects(tmp_path / "far").startswith("objects 1")
    assert first_objects(tmp_path / "near") == "objects 0"
    assert run("run", "--scenario", "lead_vehicle_20m", "--detection-range", "0") == cli.EXIT_USAGE
