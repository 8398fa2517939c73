"""Built-in scenarios, one per driving-scenario archetype in the instruction table."""

from __future__ import annotations

import math

from .scenario import ScenarioSpec, parse_scenario, serialize_scenario
from .world import (
    ActorState,
    Lane,
    LaneGraph,
    NavigationCommand,
    Pose,
    Route,
    Script,
    TrafficLightState,
    TrafficSign,
    Trigger,
)

CATALOG_NAMES = (
    "red_light_approach",
    "red_light_stationary",
    "green_light_turn",
    "pedestrian_crossing",
    "lead_vehicle_20m",
    "junction_turn",
    "lead_vehicle_lane_change",
    "ego_lane_change",
    "exit_ramp",
    "default_driving",
)

# Trigger distance and walking speed for the crossing pedestrian; a non-braking
# ego at 8 m/s reaches the crossing while the pedestrian is in its lane.
PED_TRIGGER_DISTANCE = 25.0
PED_SPEED = 1.5


def _lane(lane_id, pts, **kw) -> Lane:
    return Lane(id=lane_id, centerline=tuple((float(x), float(y)) for x, y in pts), **kw)


def _actor(actor_id, kind, dims, keyframes, trigger=None, heading=0.0) -> ActorState:
    script = Script(tuple((float(t), float(x), float(y)) for t, x, y in keyframes), trigger)
    x, y, h, v = script.sample(0.0, heading)
    return ActorState(actor_id, kind, Pose(x, y, h, v), tuple(float(d) for d in dims), script, heading)


def _cmds(*pairs) -> tuple[NavigationCommand, ...]:
    return tuple(NavigationCommand(float(s), k) for s, k in pairs)


def _arc(cx, cy, r, a0, a1, step_deg=5.0):
    n = max(2, int(round(abs(a1 - a0) / step_deg)))
    return [
        (round(cx + r * math.cos(math.radians(a0 + (a1 - a0) * k / n)), 6),
         round(cy + r * math.sin(math.radians(a0 + (a1 - a0) * k / n)), 6))
        for k in range(n + 1)
    ]


def _straight_road(length=200.0):
    return LaneGraph((_lane("L1", [(0, 0), (length, 0)]),))


def _two_lane_road(length=250.0):
    return LaneGraph(
        (
            _lane("R1", [(0, 0), (length, 0)], left_line="dashed", left_nb="L2"),
            _lane("L2", [(0, 3.5), (length, 3.5)], right_line="dashed", right_nb="R1"),
        )
    )


def _junction(side: int) -> LaneGraph:
    """Approach lane, quarter-circle connector (left for side=+1, right for -1), exit lane."""
    r = 15.0
    if side > 0:
        arc = _arc(100.0, r, r, -90.0, 0.0)
        exit_pts = [(100.0 + r, r), (100.0 + r, r + 100.0)]
    else:
        arc = _arc(100.0, -r, r, 90.0, 0.0)
        exit_pts = [(100.0 + r, -r), (100.0 + r, -r - 100.0)]
    return LaneGraph(
        (
            _lane("A1", [(0, 0), (100, 0)]),
            _lane("J1", arc, special="turn_only"),
            _lane("E1", exit_pts),
        )
    )


def _junction_signs(side: int):
    y = -3.0 if side > 0 else 3.0
    return (
        TrafficSign("speed_limit", (85.0, y), 85.0, 6.0),
        TrafficSign("speed_limit", (115.0 + 3.0 * side, 30.0 * side), 125.0, 12.0),
    )


def _build() -> dict[str, ScenarioSpec]:
    specs = {}

    specs["red_light_approach"] = ScenarioSpec(
        name="red_light_approach",
        description="ego approaches a red light at speed and must stop at the line",
        lane_graph=_straight_road(),
        route=Route(("L1",), _cmds((0, "follow"))),
        lights=(TrafficLightState("TL1", (61.0, -3.0), 60.0, (15.0, 3.0, 30.0), 0.0),),
        ego_speed=8.0,
    )

    # front bumper starts 1 m before the stop line
    specs["red_light_stationary"] = ScenarioSpec(
        name="red_light_stationary",
        description="ego waits at a red light until it turns green",
        lane_graph=_straight_road(),
        route=Route(("L1",), _cmds((0, "follow"))),
        lights=(TrafficLightState("TL1", (5.6, -3.0), 4.6, (20.0, 3.0, 40.0), 15.0),),
        ego_speed=0.0,
    )

    specs["green_light_turn"] = ScenarioSpec(
        name="green_light_turn",
        description="green light at a junction where the route turns left",
        lane_graph=_junction(+1),
        route=Route(("A1", "J1", "E1"), _cmds((0, "follow"), (100, "turn_left"), (135, "follow"))),
        lights=(TrafficLightState("TL1", (96.0, -3.0), 95.0, (10.0, 3.0, 90.0), 10.0),),
        signs=_junction_signs(+1),
        ego_speed=8.0,
    )

    ped_x = 70.0
    specs["pedestrian_crossing"] = ScenarioSpec(
        name="pedestrian_crossing",
        description="a pedestrian steps into the road when the ego gets close",
        lane_graph=_straight_road(),
        route=Route(("L1",), _cmds((0, "follow"))),
        actors=(
            _actor(
                "P1",
                "pedestrian",
                (0.6, 0.6, 1.7),
                [(0.0, ped_x, -4.5), (10.0 / PED_SPEED, ped_x, 5.5)],
                trigger=Trigger(ped_x, 0.0, PED_TRIGGER_DISTANCE),
            ),
        ),
        signs=(TrafficSign("pedestrian_crossing", (65.0, -3.0), 65.0),),
        ego_speed=8.0,
    )

    # lead vehicle 18 m ahead at 5 m/s
    specs["lead_vehicle_20m"] = ScenarioSpec(
        name="lead_vehicle_20m",
        description="slower vehicle ahead in the same lane",
        lane_graph=_straight_road(),
        route=Route(("L1",), _cmds((0, "follow"))),
        actors=(_actor("V1", "vehicle", (4.5, 1.8, 1.5), [(0.0, 18.0, 0.0), (50.0, 268.0, 0.0)]),),
        ego_speed=8.0,
    )

    specs["junction_turn"] = ScenarioSpec(
        name="junction_turn",
        description="unsignalized junction where the route turns right",
        lane_graph=_junction(-1),
        route=Route(("A1", "J1", "E1"), _cmds((0, "follow"), (100, "turn_right"), (135, "follow"))),
        signs=_junction_signs(-1),
        ego_speed=8.0,
    )

    specs["lead_vehicle_lane_change"] = ScenarioSpec(
        name="lead_vehicle_lane_change",
        description="vehicle in the left lane cuts in ahead of the ego",
        lane_graph=_two_lane_road(),
        route=Route(("R1",), _cmds((0, "follow"))),
        actors=(
            _actor(
                "V1",
                "vehicle",
                (4.5, 1.8, 1.5),
                [(0.0, 30.0, 3.5), (4.0, 54.0, 3.5), (7.0, 72.0, 0.0), (40.0, 270.0, 0.0)],
            ),
        ),
        ego_speed=8.0,
    )

    specs["ego_lane_change"] = ScenarioSpec(
        name="ego_lane_change",
        description="navigation asks for a left lane change; a barrier blocks the right lane later on",
        lane_graph=_two_lane_road(),
        route=Route(("R1", "L2"), _cmds((0, "follow"), (60, "lane_change_left"), (100, "follow"))),
        actors=(_actor("B1", "static_obstacle", (1.0, 1.0, 1.0), [(0.0, 150.0, 0.0)]),),
        ego_speed=8.0,
    )

    ramp = [(80.0, 0.0)]
    for k in range(1, 13):
        u = k / 12
        ramp.append((80.0 + 60.0 * u, round(-10.0 * (1 - math.cos(math.pi * u)) / 2, 6)))
    ramp.append((220.0, -10.0))
    specs["exit_ramp"] = ScenarioSpec(
        name="exit_ramp",
        description="route leaves the main road on a right-hand exit ramp",
        lane_graph=LaneGraph(
            (
                _lane("M1", [(0, 0), (250, 0)], right_line="dashed"),
                _lane("X1", ramp),
            )
        ),
        route=Route(("M1", "X1"), _cmds((0, "follow"), (80, "exit_ramp"), (150, "follow"))),
        signs=(
            TrafficSign("exit_ramp", (60.0, -3.0), 60.0),
            TrafficSign("speed_limit", (140.0, -13.0), 140.0, 6.0),
        ),
        ego_speed=8.0,
    )

    specs["default_driving"] = ScenarioSpec(
        name="default_driving",
        description="empty straight road",
        lane_graph=_straight_road(),
        route=Route(("L1",), _cmds((0, "follow"))),
        ego_speed=0.0,
    )
    return specs


def catalog() -> list[ScenarioSpec]:
    """All built-in scenarios, normalized through their own text form."""
    specs = _build()
    return [parse_scenario(serialize_scenario(specs[name])) for name in CATALOG_NAMES]


def get_scenario(name: str) -> ScenarioSpec:
    for spec in catalog():
        if spec.name == name:
            return spec
    raise KeyError(f"no catalog scenario named {name!r}")
