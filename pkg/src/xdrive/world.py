"""Deterministic 2D kinematic micro-simulator.

The world is an immutable value: ``step`` returns a new ``WorldState`` and
never mutates its input.  Static map data (lanes, route path) is shared
between successive states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional

from .geometry import Point, Polyline, normalize_angle, rotate_to_ego, to_ego

VEHICLE_SPEED_MAX = 20.0
PEDESTRIAN_SPEED_MAX = 3.0

ACTOR_KINDS = ("vehicle", "pedestrian", "static_obstacle")
LINE_TYPES = ("solid", "dashed")
LANE_SPECIALS = ("none", "bus", "bicycle", "turn_only")
SIGN_KINDS = ("stop", "yield", "speed_limit", "pedestrian_crossing", "exit_ramp")
PHASES = ("red", "yellow", "green")
NAV_KINDS = (
    "follow",
    "turn_left",
    "turn_right",
    "go_straight",
    "lane_change_left",
    "lane_change_right",
    "exit_ramp",
)
INFRACTION_KINDS = (
    "collision_pedestrian",
    "collision_vehicle",
    "collision_static",
    "red_light_violation",
    "route_deviation",
    "timeout",
)
COLLISION_KINDS = {
    "pedestrian": "collision_pedestrian",
    "vehicle": "collision_vehicle",
    "static_obstacle": "collision_static",
}
CATEGORY_OF_KIND = {"vehicle": "vehicle", "pedestrian": "pedestrian", "static_obstacle": "static"}

# Length of the blended transition used when the route hops to a neighbouring lane.
LANE_CHANGE_LENGTH = 20.0


@dataclass(frozen=True)
class WorldConfig:
    dt: float = 0.1
    wheelbase: float = 2.8
    max_steer: float = 0.5
    max_accel: float = 3.0
    max_decel: float = 8.0
    detection_range: float = 50.0
    deviation_limit: float = 3.5
    deviation_time: float = 2.0
    debounce: float = 2.0
    route_ahead: float = 60.0


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float = 0.0
    speed: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "heading", normalize_angle(self.heading))
        if not self.speed >= 0.0:
            raise ValueError(f"speed must be >= 0, got {self.speed}")


@dataclass(frozen=True)
class Box3:
    center_x: float
    center_y: float
    center_z: float
    length: float
    width: float
    height: float

    def __post_init__(self):
        for name in ("length", "width", "height"):
            v = getattr(self, name)
            if not v > 0.0:
                raise ValueError(f"box {name} must be > 0, got {v}")

    def as_tuple(self) -> tuple[float, ...]:
        return (self.center_x, self.center_y, self.center_z, self.length, self.width, self.height)


def footprints_overlap(a: Box3, b: Box3) -> bool:
    """Strict 2D overlap of axis-aligned footprints (touching does not count)."""
    return (
        abs(a.center_x - b.center_x) * 2.0 < a.length + b.length
        and abs(a.center_y - b.center_y) * 2.0 < a.width + b.width
    )


@dataclass(frozen=True)
class Trigger:
    x: float
    y: float
    distance: float


@dataclass(frozen=True)
class Script:
    """Position-time table; times are relative to trigger activation when a trigger is set."""

    keyframes: tuple[tuple[float, float, float], ...]
    trigger: Optional[Trigger] = None

    def sample(self, tau: float, fallback_heading: float = 0.0) -> tuple[float, float, float, float]:
        """Return (x, y, heading, speed) at script time tau."""
        kf = self.keyframes
        if len(kf) == 1:
            return kf[0][1], kf[0][2], fallback_heading, 0.0
        first_heading = math.atan2(kf[1][2] - kf[0][2], kf[1][1] - kf[0][1])
        if tau <= kf[0][0]:
            return kf[0][1], kf[0][2], first_heading, 0.0
        for (t0, x0, y0), (t1, x1, y1) in zip(kf, kf[1:]):
            if tau < t1:
                u = (tau - t0) / (t1 - t0)
                dist = math.hypot(x1 - x0, y1 - y0)
                heading = math.atan2(y1 - y0, x1 - x0) if dist > 0 else fallback_heading
                return x0 + u * (x1 - x0), y0 + u * (y1 - y0), heading, dist / (t1 - t0)
        (ta, xa, ya), (tb, xb, yb) = kf[-2], kf[-1]
        heading = math.atan2(yb - ya, xb - xa) if (xb, yb) != (xa, ya) else fallback_heading
        return xb, yb, heading, 0.0

    def max_speed(self) -> float:
        best = 0.0
        for (t0, x0, y0), (t1, x1, y1) in zip(self.keyframes, self.keyframes[1:]):
            best = max(best, math.hypot(x1 - x0, y1 - y0) / (t1 - t0))
        return best


@dataclass(frozen=True)
class ActorState:
    id: str
    kind: str
    pose: Pose
    dims: tuple[float, float, float]
    script: Script
    heading: float = 0.0
    activated_at: Optional[float] = None

    def at_time(self, t: float) -> "ActorState":
        if self.script.trigger is not None:
            tau = 0.0 if self.activated_at is None else t - self.activated_at
        else:
            tau = t
        x, y, h, v = self.script.sample(tau, self.heading)
        return replace(self, pose=Pose(x, y, h, v))


@dataclass(frozen=True)
class TrafficLightState:
    id: str
    position: Point
    stop_line_s: float
    cycle: tuple[float, float, float]  # red, yellow, green seconds
    phase_clock: float = 0.0

    def __post_init__(self):
        if min(self.cycle) <= 0:
            raise ValueError("light cycle durations must be > 0")

    @property
    def period(self) -> float:
        return sum(self.cycle)

    @property
    def phase(self) -> str:
        return phase_at(self.cycle, self.phase_clock)


def phase_at(cycle: tuple[float, float, float], clock: float) -> str:
    """Phase order within one period is red, green, yellow."""
    red, yellow, green = cycle
    c = math.fmod(clock, red + yellow + green)
    if c < 0:
        c += red + yellow + green
    if c < red:
        return "red"
    if c < red + green:
        return "green"
    return "yellow"


@dataclass(frozen=True)
class TrafficSign:
    kind: str
    position: Point
    applies_from_s: float
    value: Optional[float] = None  # speed limit in m/s for speed_limit signs


@dataclass(frozen=True)
class Lane:
    id: str
    centerline: tuple[Point, ...]
    width: float = 3.5
    left_line: str = "solid"
    right_line: str = "solid"
    left_nb: Optional[str] = None
    right_nb: Optional[str] = None
    special: str = "none"

    @cached_property
    def polyline(self) -> Polyline:
        return Polyline(self.centerline)


@dataclass(frozen=True)
class LaneGraph:
    lanes: tuple[Lane, ...]

    @cached_property
    def by_id(self) -> dict[str, Lane]:
        return {lane.id: lane for lane in self.lanes}

    def __contains__(self, lane_id: str) -> bool:
        return lane_id in self.by_id

    def __getitem__(self, lane_id: str) -> Lane:
        return self.by_id[lane_id]

    def nearest_lane(self, x: float, y: float, prefer: tuple[str, ...] = ()) -> str:
        best_id, best_d = None, float("inf")
        order = list(prefer) + [lane.id for lane in self.lanes if lane.id not in prefer]
        for lane_id in order:
            _, lat = self[lane_id].polyline.project(x, y)
            if abs(lat) < best_d - 1e-9:
                best_id, best_d = lane_id, abs(lat)
        return best_id


@dataclass(frozen=True)
class NavigationCommand:
    at_s: float
    kind: str

    def __post_init__(self):
        if self.kind not in NAV_KINDS:
            raise ValueError(f"unknown navigation command {self.kind!r}")


@dataclass(frozen=True)
class Route:
    lane_ids: tuple[str, ...]
    commands: tuple[NavigationCommand, ...] = ()


def build_route_path(graph: LaneGraph, route: Route) -> Polyline:
    """Concatenate route lanes into one centerline.

    A successor lane must start on the previous lane's centerline (within
    0.5 m); the path is cut there.  A neighbouring lane is joined with a
    cosine-blended transition starting at the next lane-change command.
    """
    for lane_id in route.lane_ids:
        if lane_id not in graph:
            raise ValueError(f"unknown lane id {lane_id}")
    cur = graph[route.lane_ids[0]].polyline
    cur_s0 = 0.0  # arc length along `cur` where the path entered it
    base: list[Point] = [cur.points[0]]  # path up to and including the entry point of `cur`
    for prev_id, next_id in zip(route.lane_ids, route.lane_ids[1:]):
        prev, nxt = graph[prev_id], graph[next_id]
        npl = nxt.polyline
        path_s0 = Polyline(base).length if len(base) > 1 else 0.0
        if next_id in (prev.left_nb, prev.right_nb):
            want = "lane_change_left" if next_id == prev.left_nb else "lane_change_right"
            cmds = [c for c in route.commands if c.kind == want and c.at_s >= path_s0 - 1e-9]
            if not cmds:
                raise ValueError(f"route hops {prev_id}->{next_id} without a {want} command")
            s_cut = cur_s0 + (cmds[0].at_s - path_s0)
            if s_cut + LANE_CHANGE_LENGTH > cur.length:
                raise ValueError(f"lane change {prev_id}->{next_id} runs past the end of {prev_id}")
            head = cur.slice(cur_s0, s_cut)
            blend = []
            n = 10
            for k in range(1, n):
                u = k / n
                w = (1.0 - math.cos(math.pi * u)) / 2.0
                a = cur.point_at(s_cut + u * LANE_CHANGE_LENGTH)
                b = npl.point_at(npl.project(*a)[0])
                blend.append(((1 - w) * a[0] + w * b[0], (1 - w) * a[1] + w * b[1]))
            s_join, _ = npl.project(*cur.point_at(s_cut + LANE_CHANGE_LENGTH))
            base = base[:-1] + head + blend + [npl.point_at(s_join)]
            cur_s0 = s_join
        else:
            s_branch, lat = cur.project(*npl.points[0], cur_s0, cur.length)
            if abs(lat) > 0.5:
                raise ValueError(f"lane {next_id} is not connected to {prev_id}")
            head = cur.slice(cur_s0, s_branch)
            base = base[:-1] + head[:-1] + [npl.points[0]]
            cur_s0 = 0.0
        cur = npl
    return Polyline(base[:-1] + cur.slice(cur_s0, cur.length))


@dataclass(frozen=True)
class Infraction:
    kind: str
    t: float
    detail: str = ""


@dataclass(frozen=True)
class InfractionLedger:
    events: tuple[Infraction, ...] = ()

    def add(self, event: Infraction, debounce: float = 2.0) -> "InfractionLedger":
        for e in reversed(self.events):
            if e.kind == event.kind and event.t - e.t < debounce - 1e-9:
                return self
        return InfractionLedger(self.events + (event,))

    def count(self, kind: str) -> int:
        return sum(1 for e in self.events if e.kind == kind)


@dataclass(frozen=True)
class EgoState:
    pose: Pose
    current_lane_id: str
    dims: tuple[float, float, float] = (4.6, 1.8, 1.5)
    rear_overhang: float = 1.0

    @property
    def front_offset(self) -> float:
        return self.dims[0] - self.rear_overhang

    def box(self) -> Box3:
        """Ego footprint in its own frame (origin at the rear axle)."""
        length, width, height = self.dims
        return Box3(length / 2.0 - self.rear_overhang, 0.0, height / 2.0, length, width, height)


@dataclass(frozen=True)
class Action:
    steer: float = 0.0
    throttle: float = 0.0
    brake: float = 0.0

    def validate(self) -> None:
        vals = (self.steer, self.throttle, self.brake)
        if any(not math.isfinite(v) for v in vals):
            raise ValueError("invalid action")
        if not (-1.0 <= self.steer <= 1.0 and 0.0 <= self.throttle <= 1.0 and 0.0 <= self.brake <= 1.0):
            raise ValueError("invalid action: field out of range")


@dataclass(frozen=True)
class WorldState:
    t: float
    ego: EgoState
    actors: tuple[ActorState, ...]
    lights: tuple[TrafficLightState, ...]
    signs: tuple[TrafficSign, ...]
    lane_graph: LaneGraph
    route: Route
    path: Polyline = field(compare=False, repr=False)
    ledger: InfractionLedger = InfractionLedger()
    progress_s: float = 0.0
    off_route_time: float = 0.0
    time_budget: float = 120.0
    config: WorldConfig = WorldConfig()

    @property
    def ego_front_s(self) -> float:
        return self.progress_s + self.ego.front_offset

    def with_ego(self, pose: Pose) -> "WorldState":
        """Place the ego anywhere, re-projecting progress globally."""
        s, _ = self.path.project(pose.x, pose.y)
        lane_id = self.lane_graph.nearest_lane(pose.x, pose.y, self.route.lane_ids)
        return replace(self, ego=replace(self.ego, pose=pose, current_lane_id=lane_id), progress_s=s)


def new_world(
    lane_graph: LaneGraph,
    route: Route,
    actors=(),
    lights=(),
    signs=(),
    ego_speed: float = 0.0,
    ego_lateral: float = 0.0,
    time_budget: float = 120.0,
    config: WorldConfig = WorldConfig(),
) -> WorldState:
    path = build_route_path(lane_graph, route)
    x0, y0 = path.point_at(0.0)
    h0 = path.heading_at(0.0)
    x0 -= math.sin(h0) * ego_lateral
    y0 += math.cos(h0) * ego_lateral
    pose = Pose(x0, y0, h0, ego_speed)
    ego = EgoState(pose=pose, current_lane_id=route.lane_ids[0])
    world = WorldState(
        t=0.0,
        ego=ego,
        actors=tuple(a.at_time(0.0) for a in actors),
        lights=tuple(lights),
        signs=tuple(signs),
        lane_graph=lane_graph,
        route=route,
        path=path,
        time_budget=time_budget,
        config=config,
    )
    return world.with_ego(pose)


def actor_box_in_ego(ego_pose: Pose, actor: ActorState) -> Box3:
    ex, ey = to_ego(ego_pose.x, ego_pose.y, ego_pose.heading, actor.pose.x, actor.pose.y)
    length, width, height = actor.dims
    return Box3(ex, ey, height / 2.0, length, width, height)


def step(world: WorldState, action: Action, dt: Optional[float] = None) -> WorldState:
    """Advance the world by one tick under the given ego action."""
    action.validate()
    cfg = world.config
    dt = cfg.dt if dt is None else dt
    if not dt > 0:
        raise ValueError("dt must be > 0")
    p = world.ego.pose
    delta = action.steer * cfg.max_steer
    x = p.x + p.speed * math.cos(p.heading) * dt
    y = p.y + p.speed * math.sin(p.heading) * dt
    heading = p.heading + (p.speed / cfg.wheelbase) * math.tan(delta) * dt
    speed = max(0.0, p.speed + (action.throttle * cfg.max_accel - action.brake * cfg.max_decel) * dt)
    pose = Pose(x, y, heading, speed)
    t_new = world.t + dt

    actors = []
    for a in world.actors:
        if a.script.trigger is not None and a.activated_at is None:
            tr = a.script.trigger
            lon = (tr.x - x) * math.cos(pose.heading) + (tr.y - y) * math.sin(pose.heading)
            if lon < tr.distance:
                a = replace(a, activated_at=t_new)
        actors.append(a.at_time(t_new))

    lights = tuple(replace(l, phase_clock=l.phase_clock + dt) for l in world.lights)

    path = world.path
    s_proj, lat = path.project(x, y, world.progress_s - 5.0, world.progress_s + 30.0)
    progress_s = max(world.progress_s, s_proj)
    lane_id = world.lane_graph.nearest_lane(x, y, (world.ego.current_lane_id,) + world.route.lane_ids)
    ego = replace(world.ego, pose=pose, current_lane_id=lane_id)

    ledger = world.ledger
    db = cfg.debounce
    ego_box = ego.box()
    for a in actors:
        if footprints_overlap(ego_box, actor_box_in_ego(pose, a)):
            ledger = ledger.add(Infraction(COLLISION_KINDS[a.kind], t_new, a.id), db)

    front_old = world.progress_s + ego.front_offset
    front_new = progress_s + ego.front_offset
    for light in world.lights:
        # phase in force during this tick is the one at its start
        if light.phase == "red" and front_old < light.stop_line_s <= front_new:
            ledger = ledger.add(Infraction("red_light_violation", t_new, light.id), db)

    off_time = world.off_route_time + dt if abs(lat) > cfg.deviation_limit else 0.0
    if off_time > cfg.deviation_time + 1e-9:
        ledger = ledger.add(Infraction("route_deviation", t_new, f"{lat:.2f}"), db)

    if world.t < world.time_budget - 1e-9 <= t_new:
        ledger = ledger.add(Infraction("timeout", t_new), db)

    return replace(
        world,
        t=t_new,
        ego=ego,
        actors=tuple(actors),
        lights=lights,
        ledger=ledger,
        progress_s=progress_s,
        off_route_time=off_time,
    )


def route_progress(world: WorldState) -> float:
    """Arc-length fraction of the route completed, clamped to [0, 1]."""
    length = world.path.length
    return min(max(world.progress_s / length, 0.0), 1.0)


# -- ground truth --------------------------------------------------------------------


@dataclass(frozen=True)
class ObjectTruth:
    id: str
    category: str
    box: Box3
    motion: str
    velocity: tuple[float, float]  # ego-frame


@dataclass(frozen=True)
class LightTruth:
    id: str
    phase: str
    distance_to_stop_line: float  # from the ego front bumper


@dataclass(frozen=True)
class SignTruth:
    kind: str
    distance: float  # from the ego front bumper, negative once passed
    value: Optional[float] = None


@dataclass(frozen=True)
class LaneTruth:
    lane_id: str
    left_line: str
    right_line: str
    legal_left: bool
    legal_right: bool
    special: str
    width: float


@dataclass(frozen=True)
class SceneTruth:
    objects: tuple[ObjectTruth, ...]
    light: Optional[LightTruth]
    signs: tuple[SignTruth, ...]
    lane: LaneTruth
    route_ahead: tuple[Point, ...]  # ego-frame route centerline from the ego projection onwards
    front_offset: float = 4.6 - 1.0


def classify_motion(x: float, vx: float, vy: float) -> str:
    if math.hypot(vx, vy) < 0.2:
        return "stationary"
    if abs(vy) >= 0.4:
        return "crossing_left" if vy > 0 else "crossing_right"
    return "toward_ego" if vx * (1.0 if x >= 0 else -1.0) < 0 else "away"


def lane_truth(graph: LaneGraph, lane_id: str) -> LaneTruth:
    lane = graph[lane_id]
    return LaneTruth(
        lane_id=lane.id,
        left_line=lane.left_line,
        right_line=lane.right_line,
        legal_left=lane.left_nb is not None and lane.left_line == "dashed",
        legal_right=lane.right_nb is not None and lane.right_line == "dashed",
        special=lane.special,
        width=lane.width,
    )


def ground_truth_scene(world: WorldState, range_m: Optional[float] = None) -> SceneTruth:
    """Per-subtask ground truth in the ego frame (x forward, y left, origin at rear axle)."""
    range_m = world.config.detection_range if range_m is None else range_m
    if not range_m > 0:
        raise ValueError("range_m must be > 0")
    p = world.ego.pose
    objects = []
    for a in world.actors:
        box = actor_box_in_ego(p, a)
        if math.hypot(box.center_x, box.center_y) > range_m:
            continue
        vx, vy = rotate_to_ego(p.heading, a.pose.speed * math.cos(a.pose.heading), a.pose.speed * math.sin(a.pose.heading))
        objects.append(
            ObjectTruth(a.id, CATEGORY_OF_KIND[a.kind], box, classify_motion(box.center_x, vx, vy), (vx, vy))
        )
    objects.sort(key=lambda o: (math.hypot(o.box.center_x, o.box.center_y), o.id))

    front = world.ego_front_s
    light = None
    for l in world.lights:
        d = l.stop_line_s - front
        if 0.0 <= d <= range_m and (light is None or d < light.distance_to_stop_line):
            light = LightTruth(l.id, l.phase, d)

    signs = []
    last_limit = None
    for sgn in sorted(world.signs, key=lambda s: s.applies_from_s):
        d = sgn.applies_from_s - front
        if 0.0 <= d <= range_m:
            signs.append(SignTruth(sgn.kind, d, sgn.value))
        elif d < 0 and sgn.kind == "speed_limit":
            last_limit = SignTruth(sgn.kind, d, sgn.value)
    if last_limit is not None:
        signs.insert(0, last_limit)

    s0 = world.progress_s
    ahead = world.path.slice(s0, s0 + world.config.route_ahead, step=1.0)
    route_ahead = tuple(to_ego(p.x, p.y, p.heading, qx, qy) for qx, qy in ahead)
    return SceneTruth(
        objects=tuple(objects),
        light=light,
        signs=tuple(signs),
        lane=lane_truth(world.lane_graph, world.ego.current_lane_id),
        route_ahead=route_ahead,
        front_offset=world.ego.front_offset,
    )
