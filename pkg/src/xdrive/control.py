"""Waypoint follower: pure pursuit for steering, proportional speed control."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .reports import Decision, WaypointPlan
from .world import Action


@dataclass(frozen=True)
class ControlConfig:
    wheelbase: float = 2.8
    max_steer: float = 0.5
    lookahead_gain: float = 1.2
    lookahead_min: float = 2.0
    lookahead_max: float = 8.0
    speed_gain: float = 0.5  # 1/s
    max_accel: float = 3.0
    max_decel: float = 8.0
    hold_speed: float = 0.3
    plan_dt: float = 0.5
    saturation_eps: float = 1e-3


def _clamp(x: float, lo: float, hi: float) -> float:
    return min(max(x, lo), hi)


def pure_pursuit_steer(plan: WaypointPlan, ego_speed: float, cfg: ControlConfig = ControlConfig()) -> float:
    ld = _clamp(cfg.lookahead_gain * ego_speed, cfg.lookahead_min, cfg.lookahead_max)
    target = plan.points[-1]
    for p in plan.points:
        if math.hypot(p[0], p[1]) >= ld:
            target = p
            break
    kappa = 2.0 * target[1] / (ld * ld)
    return _clamp(math.atan(kappa * cfg.wheelbase) / cfg.max_steer, -1.0, 1.0)


def _speed_command(error: float, cfg: ControlConfig) -> tuple[float, float]:
    accel = cfg.speed_gain * error
    if accel >= 0:
        return _clamp(accel / cfg.max_accel, 0.0, 1.0), 0.0
    return 0.0, _clamp(-accel / cfg.max_decel, 0.0, 1.0)


def _path_length(points) -> float:
    total, prev = 0.0, (0.0, 0.0)
    for p in points:
        total += math.hypot(p[0] - prev[0], p[1] - prev[1])
        prev = p
    return total


def compute_action(plan: WaypointPlan, decision: Decision, ego_speed: float, cfg: ControlConfig = ControlConfig()) -> Action:
    steer = pure_pursuit_steer(plan, ego_speed, cfg)
    if not decision.is_stop:
        throttle, brake = _speed_command(decision.target_speed - ego_speed, cfg)
        return Action(steer, throttle, brake)
    if ego_speed < cfg.hold_speed:
        return Action(steer, 0.0, 1.0)
    pts = plan.points
    if math.dist(pts[-1], pts[-2]) < cfg.saturation_eps:
        # the plan comes to rest within its horizon: brake for the remaining distance
        d = _path_length(pts)
        need = ego_speed * ego_speed / (2.0 * d) if d > 1e-6 else cfg.max_decel
        return Action(steer, 0.0, _clamp(need / cfg.max_decel, 0.0, 1.0))
    implied = math.hypot(*pts[0]) / cfg.plan_dt
    throttle, brake = _speed_command(implied - ego_speed, cfg)
    return Action(steer, throttle, brake)
