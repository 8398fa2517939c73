"""Closed-loop episode runner and catalog suite."""

from __future__ import annotations

import csv
import itertools
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .catalog import CATALOG_NAMES, get_scenario
from .control import ControlConfig, compute_action
from .cot import (
    SYSTEM_PROMPT,
    HistoryBuffer,
    Observation,
    StageFailure,
    observation_digest,
    run_pipeline,
    serialize_tick,
    update_history,
)
from .parse import serialize_stage
from .policies import OraclePolicy, Policy, RemotePolicy, make_policy, scene_attachment
from .scenario import ScenarioError, ScenarioSpec, build_world, load_scenario
from .trace import EpisodeLog, LogWriter, read_log
from .world import (
    COLLISION_KINDS,
    Action,
    NavigationCommand,
    WorldConfig,
    WorldState,
    ground_truth_scene,
    route_progress,
    step,
)

log = logging.getLogger(__name__)

NAV_LOOKAHEAD = 20.0
FALLBACK_ACTION = Action(0.0, 0.0, 1.0)
COLLISIONS = frozenset(COLLISION_KINDS.values())


@dataclass(frozen=True)
class RunConfig:
    scenario: str
    policy: str = "oracle"
    endpoint: Optional[str] = None
    seed: int = 0
    out_dir: str = "runs"
    dt: float = 0.1
    ticks_max: Optional[int] = None
    detection_range: float = 50.0
    timeout_ms: int = 2000
    max_degraded_ticks: int = 20
    control: ControlConfig = field(default_factory=ControlConfig)


def resolve_scenario(ref: str) -> ScenarioSpec:
    if ref in CATALOG_NAMES:
        return get_scenario(ref)
    path = Path(ref)
    if not path.is_file():
        raise ScenarioError(f"no catalog scenario or file named {ref!r}")
    return load_scenario(path)


def nav_commands(world: WorldState) -> tuple[NavigationCommand, Optional[NavigationCommand]]:
    """Command in force near the ego and the next one along the route."""
    horizon = world.progress_s + NAV_LOOKAHEAD
    current = NavigationCommand(0.0, "follow")
    preview = None
    for c in world.route.commands:
        if c.at_s <= horizon:
            current = c
        else:
            preview = c
            break
    return current, preview


def log_stem(spec_name: str, policy: str) -> str:
    return f"{spec_name}__{policy}"


def _ego_record(world: WorldState) -> dict:
    p = world.ego.pose
    return {
        "x": p.x,
        "y": p.y,
        "heading": p.heading,
        "speed": p.speed,
        "s": world.progress_s,
        "lane": world.ego.current_lane_id,
    }


def _infraction_records(events) -> list[dict]:
    return [{"kind": e.kind, "t": round(e.t, 6), "detail": e.detail} for e in events]


def run_episode(cfg: RunConfig, policy: Optional[Policy] = None) -> EpisodeLog:
    """Run one closed-loop episode, streaming its log to ``cfg.out_dir``."""
    spec = resolve_scenario(cfg.scenario)
    world = build_world(spec, WorldConfig(dt=cfg.dt, detection_range=cfg.detection_range))
    session = f"{spec.name}-{cfg.seed}"
    if policy is None:
        policy = make_policy(cfg.policy, cfg.endpoint, session, cfg.timeout_ms)
    policy.reset()
    shadow = None if isinstance(policy, OraclePolicy) and policy.attention else OraclePolicy()
    remote = isinstance(policy, RemotePolicy)

    out = Path(cfg.out_dir)
    stem = log_stem(spec.name, cfg.policy)
    log_path = out / f"{stem}.jsonl"
    csv_path = out / f"{stem}.trajectory.csv"
    header = {
        "type": "header",
        "scenario": spec.name,
        "policy": cfg.policy,
        "seed": cfg.seed,
        "session": session,
        "dt": cfg.dt,
        "time_budget": spec.time_budget,
        "route_length": world.path.length,
        "system_prompt": SYSTEM_PROMPT,
    }
    episode = EpisodeLog(dict(header, v=1), path=log_path)
    history = HistoryBuffer()
    clock = itertools.count()
    degraded_run = 0
    terminal = None
    tick = 0

    with LogWriter(log_path) as writer, open(csv_path, "w", newline="", encoding="utf-8") as fh:
        traj = csv.writer(fh, lineterminator="\n")
        traj.writerow(["t", "x", "y", "heading", "speed", "s", "steer", "throttle", "brake", "template"])
        writer.write(header)
        try:
            while terminal is None:
                scene = ground_truth_scene(world)
                nav, preview = nav_commands(world)
                speed = world.ego.pose.speed
                truth_obs = Observation(world.t, speed, nav, preview, scene=scene, history=history)
                if remote:
                    obs = replace(truth_obs, scene=None, image_refs=(scene_attachment(scene),))
                else:
                    obs = truth_obs

                record = {
                    "type": "tick",
                    "tick": tick,
                    "t": round(world.t, 6),
                    "obs": observation_digest(obs),
                    "ego": _ego_record(world),
                }
                failure = None
                timeouts_before = policy.timeouts if remote else 0
                try:
                    result = run_pipeline(policy, obs, clock)
                    trace = result.trace
                except StageFailure as exc:
                    result, trace, failure = None, exc.trace, exc

                if shadow is None:
                    truth = result
                else:
                    truth = run_pipeline(shadow, truth_obs)
                if remote:
                    record["timeouts"] = policy.timeouts - timeouts_before
                record["nav"] = trace.nav_text
                record["scene"] = trace.scene_text
                record["stages"] = [
                    {"stage": r.stage, "seq": r.seq, "prompt": r.prompt, "output": r.output} for r in trace.records
                ]
                record["truth"] = {
                    "objects": serialize_stage("objects", truth.objects),
                    "waypoints": serialize_stage("waypoints", truth.waypoints),
                }

                if result is not None:
                    degraded_run = 0
                    action = compute_action(result.waypoints, result.decision, speed, cfg.control)
                    history = update_history(history, serialize_tick(result.reports, result.decision))
                    record["status"] = "ok"
                    template = result.decision.template_id
                else:
                    degraded_run += 1
                    action = FALLBACK_ACTION
                    record["status"] = "degraded"
                    record["failure"] = {
                        "stage": failure.stage,
                        "kind": failure.kind,
                        "message": failure.message,
                        "raw": failure.raw,
                    }
                    template = ""
                    log.warning("tick %d degraded: %s", tick, failure)
                    if failure.kind == "connection" or degraded_run >= cfg.max_degraded_ticks:
                        terminal = "policy_failure"

                record["action"] = {"steer": action.steer, "throttle": action.throttle, "brake": action.brake}
                traj.writerow([
                    repr(round(world.t, 6)), repr(world.ego.pose.x), repr(world.ego.pose.y),
                    repr(world.ego.pose.heading), repr(speed), repr(world.progress_s),
                    repr(action.steer), repr(action.throttle), repr(action.brake), template,
                ])

                n_before = len(world.ledger.events)
                world = step(world, action)
                new = world.ledger.events[n_before:]
                record["infractions"] = _infraction_records(new)
                writer.write(record)
                episode.ticks.append(dict(record, v=1))
                tick += 1

                if terminal is not None:
                    break
                if any(e.kind in COLLISIONS for e in new):
                    terminal = "fatal_collision"
                elif route_progress(world) >= 1.0:
                    terminal = "destination"
                elif world.t >= spec.time_budget - 1e-9:
                    terminal = "timeout"
                elif cfg.ticks_max is not None and tick >= cfg.ticks_max:
                    terminal = "timeout"
        finally:
            if isinstance(policy, RemotePolicy):
                policy.close()
            end = {
                "type": "end",
                "terminal": terminal or "policy_failure",
                "t": round(world.t, 6),
                "ticks": tick,
                "route_completion": route_progress(world),
                "final_ego": _ego_record(world),
                "infractions": _infraction_records(world.ledger.events),
            }
            writer.write(end)
            episode.end = dict(end, v=1)
    return episode


def _run_one(cfg: RunConfig) -> str:
    return str(run_episode(cfg).path)


def run_suite(
    policy: str = "oracle",
    out_dir: str = "runs",
    seed: int = 0,
    jobs: int = 1,
    scenarios=CATALOG_NAMES,
    **overrides,
) -> list[EpisodeLog]:
    """Run every catalog scenario; episodes are independent and may run in parallel."""
    cfgs = [RunConfig(name, policy, seed=seed, out_dir=out_dir, **overrides) for name in scenarios]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            paths = list(pool.map(_run_one, cfgs))
    else:
        paths = [_run_one(c) for c in cfgs]
    return [read_log(p) for p in paths]


def load_logs(logs_dir) -> list[EpisodeLog]:
    paths = sorted(Path(logs_dir).glob("*.jsonl"))
    if not paths:
        raise FileNotFoundError(f"no episode logs in {logs_dir}")
    return [read_log(p) for p in paths]


def default_out_dir() -> str:
    return os.environ.get("XDRIVE_OUT", "runs")
