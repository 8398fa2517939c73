"""Policies that answer the reasoning stages.

``OraclePolicy`` reads simulator truth and applies a fixed rule table.
``AblationPolicy`` sees the same truth but skips per-object attention, so it
cannot react to crossing pedestrians or vehicles cutting in.
``RemotePolicy`` forwards every stage prompt to an external model process.
"""

from __future__ import annotations

import base64
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .cot import Observation, PromptBundle, StageFailure, render_scene
from .geometry import Polyline
from .parse import serialize_stage
from .remote import RemoteClient, RemoteConnectionError, RemoteProtocolError, RemoteTimeout
from .reports import (
    STOP_TEMPLATES,
    WAYPOINT_TIMES,
    Decision,
    DetectedObject,
    LaneReport,
    LightReport,
    ObjectReport,
    SignEntry,
    SignReport,
    WaypointPlan,
    fill_template,
)
from .world import NavigationCommand, SceneTruth

DEFAULT_SPEED_LIMIT = 13.89
CRUISE_CAP = 8.0
EXIT_FACTOR = 0.6
CUT_IN_FACTOR = 0.7
PLAN_ACCEL = 2.0
PLAN_DECEL = 4.0
MAX_DECEL = 8.0
STOP_LINE_BUFFER = 1.0
PEDESTRIAN_BUFFER = 5.0
EGO_FRONT_OFFSET = 3.6
ATTENTION_RANGE = 30.0
LEAD_RANGE = 20.0
CORRIDOR_HALF_WIDTH = 1.2
FOLLOW_STANDSTILL = 6.0
FOLLOW_HEADWAY = 1.5
STATIONARY_SPEED = 0.5
RELEASE_TICKS = 5
SIGN_LOOKAHEAD = 20.0

JUNCTION_KINDS = ("turn_left", "turn_right", "go_straight")
RED_TEMPLATES = ("red_light_approach", "red_light_stationary")
_TURN_PHRASE = {"turn_left": "Turn left", "turn_right": "Turn right", "go_straight": "Go straight"}


# -- perception from truth ------------------------------------------------------------


def _in_corridor(o) -> bool:
    return abs(o.box.center_y) - o.box.width / 2.0 < CORRIDOR_HALF_WIDTH


def _dist(o) -> float:
    return math.hypot(o.box.center_x, o.box.center_y)


def _attention(category: str, motion: str, box) -> str:
    """Reason an object deserves attention, or '' if it does not."""
    x, y = box.center_x, box.center_y
    if x <= 0:
        return ""
    d = math.hypot(x, y)
    in_path = abs(y) - box.width / 2.0 < CORRIDOR_HALF_WIDTH
    if category == "pedestrian":
        if motion.startswith("crossing") and d <= ATTENTION_RANGE:
            return "pedestrian crossing ahead"
        if in_path:
            return "pedestrian in the ego path"
    elif category == "vehicle":
        toward = (motion == "crossing_right" and y > 0) or (motion == "crossing_left" and y < 0)
        if toward and d <= ATTENTION_RANGE:
            return "vehicle moving into the ego lane"
        if in_path and d <= ATTENTION_RANGE:
            return "vehicle ahead in the ego lane"
    elif category == "static" and in_path and d <= ATTENTION_RANGE:
        return "obstacle in the ego path"
    return ""


def perceive_objects(scene: SceneTruth, attention: bool = True) -> ObjectReport:
    out = []
    for o in scene.objects:
        reason = _attention(o.category, o.motion, o.box) if attention else ""
        out.append(DetectedObject(o.category, o.box, o.motion, bool(reason), reason))
    return ObjectReport(tuple(out))


def perceive_light(scene: SceneTruth) -> LightReport:
    if scene.light is None:
        return LightReport()
    return LightReport(True, scene.light.phase, scene.light.distance_to_stop_line)


def perceive_signs(scene: SceneTruth) -> SignReport:
    return SignReport(tuple(SignEntry(s.kind, s.distance, s.value) for s in scene.signs))


def perceive_lane(scene: SceneTruth) -> LaneReport:
    ln = scene.lane
    return LaneReport(ln.lane_id, ln.left_line, ln.right_line, ln.legal_left, ln.legal_right, ln.special)


# -- rule table ------------------------------------------------------------------------


@dataclass(frozen=True)
class StopLatch:
    """Hysteresis state: the active stop template and how long its hazard has been clear."""

    template_id: Optional[str] = None
    clear_ticks: int = 0


def speed_limit(signs: SignReport) -> float:
    """Limit in force, tightened by any posted limit coming up within a short lookahead."""
    limit = DEFAULT_SPEED_LIMIT
    for s in signs.signs:
        if s.kind == "speed_limit" and s.distance < 0:
            limit = s.value
    for s in signs.signs:
        if s.kind == "speed_limit" and 0 <= s.distance <= SIGN_LOOKAHEAD:
            limit = min(limit, s.value)
    return limit


def follow_speed(gap: float, cruise: float) -> float:
    return min(max((gap - FOLLOW_STANDSTILL) / FOLLOW_HEADWAY, 0.0), cruise)


def _gap(o, front_offset: float) -> float:
    return o.box.center_x - o.box.length / 2.0 - front_offset


def _red_light(light: LightReport, ego_speed: float) -> bool:
    if not light.visible:
        return False
    if light.phase == "red":
        return True
    if light.phase == "yellow":
        return light.distance_to_stop_line - STOP_LINE_BUFFER >= ego_speed**2 / (2.0 * PLAN_DECEL)
    return False


def _crossing_pedestrians(objects: ObjectReport):
    return [
        o
        for o in objects.objects
        if o.category == "pedestrian"
        and o.attend
        and o.box.center_x > 0
        and ((o.motion.startswith("crossing") and _dist(o) <= ATTENTION_RANGE) or _in_corridor(o))
    ]


def _cut_ins(objects: ObjectReport):
    return [
        o
        for o in objects.objects
        if o.category == "vehicle"
        and o.attend
        and o.box.center_x > 0
        and ((o.motion == "crossing_right" and o.box.center_y > 0) or (o.motion == "crossing_left" and o.box.center_y < 0))
    ]


def _leads(objects: ObjectReport, front_offset: float):
    return sorted(
        (
            o
            for o in objects.objects
            if o.category in ("vehicle", "static")
            and o.box.center_x > 0
            and _in_corridor(o)
            and _gap(o, front_offset) <= LEAD_RANGE
        ),
        key=lambda o: _gap(o, front_offset),
    )


def _red_template(ego_speed: float) -> str:
    return "red_light_approach" if ego_speed >= STATIONARY_SPEED else "red_light_stationary"


def _rule(reports: dict, ego_speed, nav, preview, attention, front_offset) -> tuple[str, tuple, str, float]:
    """First matching row of the priority table: (template, slots, rationale, target)."""
    objects, light, signs = reports["objects"], reports["light"], reports["sign"]
    cruise = min(speed_limit(signs), CRUISE_CAP)
    if _red_light(light, ego_speed):
        why = f"{light.phase} light, stop line {light.distance_to_stop_line:.1f} m ahead"
        return _red_template(ego_speed), (), why, 0.0
    if attention:
        peds = _crossing_pedestrians(objects)
        if peds:
            return "pedestrian_crossing", (), f"pedestrian {_dist(peds[0]):.1f} m ahead", 0.0
        cuts = _cut_ins(objects)
        if cuts:
            o = min(cuts, key=lambda c: _gap(c, front_offset))
            target = min(follow_speed(_gap(o, front_offset), cruise), CUT_IN_FACTOR * cruise)
            slot = "Pay attention to the vehicle ahead changing lanes."
            return "lead_vehicle_lane_change", (slot,), f"vehicle cutting in {_gap(o, front_offset):.1f} m ahead", target
    leads = _leads(objects, front_offset)
    if leads:
        o = leads[0]
        gap = _gap(o, front_offset)
        slot = "There is a vehicle ahead." if o.category == "vehicle" else "There is an obstacle ahead."
        return "lead_vehicle_20m", (slot,), f"gap {gap:.1f} m", follow_speed(gap, cruise)
    kind = nav.kind
    if kind in JUNCTION_KINDS:
        slots = (_TURN_PHRASE[kind], "Pay attention to the crossing traffic.")
        return "junction_turn", slots, f"navigation: {kind}", cruise
    if kind in ("lane_change_left", "lane_change_right"):
        return "ego_lane_change", (), f"navigation: {kind}", cruise
    if kind == "exit_ramp":
        slot = "Approaching exit ramp, reduce speed, and enhance environment observation."
        return "exit_ramp", (slot,), "navigation: exit_ramp", EXIT_FACTOR * cruise
    upcoming = preview.kind if preview is not None else None
    if light.visible and light.phase == "green" and upcoming in JUNCTION_KINDS:
        slots = ("Pay attention to the crossing traffic.", _TURN_PHRASE[upcoming].lower())
        return "green_light_turn", slots, f"green light, then {upcoming}", cruise
    return "default_driving", (), "no hazard", cruise


def oracle_decide(
    reports: dict,
    ego_speed: float,
    nav: NavigationCommand,
    preview: Optional[NavigationCommand] = None,
    latch: StopLatch = StopLatch(),
    attention: bool = True,
    front_offset: float = EGO_FRONT_OFFSET,
) -> tuple[Decision, StopLatch]:
    """Pick a template by hazard priority, then apply stop hysteresis."""
    tid, slots, why, target = _rule(reports, ego_speed, nav, preview, attention, front_offset)
    if tid in STOP_TEMPLATES:
        latch = StopLatch(tid, 0)
    elif latch.template_id is not None:
        clear = latch.clear_ticks + 1
        if clear < RELEASE_TICKS:
            held = _red_template(ego_speed) if latch.template_id in RED_TEMPLATES else latch.template_id
            latch = StopLatch(held, clear)
            return Decision(held, fill_template(held, ()), f"holding stop, clear for {clear} tick(s)", 0.0), latch
        latch = StopLatch()
    return Decision(tid, fill_template(tid, slots), why, round(target, 3)), latch


def ablation_decide(
    reports: dict,
    ego_speed: float,
    nav: NavigationCommand,
    preview: Optional[NavigationCommand] = None,
    latch: StopLatch = StopLatch(),
    front_offset: float = EGO_FRONT_OFFSET,
) -> tuple[Decision, StopLatch]:
    """Same table without the attention-driven rows (pedestrians, cut-ins)."""
    return oracle_decide(reports, ego_speed, nav, preview, latch, attention=False, front_offset=front_offset)


# -- planning --------------------------------------------------------------------------


def _ramp(v0: float, v1: float, t: float, accel: float, decel: float) -> float:
    """Distance after t seconds moving from v0 toward v1 at a constant rate, then holding v1."""
    a = accel if v1 >= v0 else -decel
    t_r = (v1 - v0) / a if a else 0.0
    if t <= t_r:
        return v0 * t + 0.5 * a * t * t
    return v0 * t_r + 0.5 * a * t_r * t_r + v1 * (t - t_r)


def profile_distances(
    v0: float,
    target: float,
    times: Sequence[float] = WAYPOINT_TIMES,
    stop_at: Optional[float] = None,
    accel: float = PLAN_ACCEL,
    decel: float = PLAN_DECEL,
) -> list[float]:
    """Travelled distance at each time.

    With ``stop_at`` the ego keeps its speed and brakes at ``decel`` as late as
    possible to halt exactly there; when that is no longer possible it brakes
    harder, up to the vehicle limit.
    """
    if stop_at is None:
        return [_ramp(v0, target, t, accel, decel) for t in times]
    if v0 < 0.05:
        return [0.0 for _ in times]
    d = max(stop_at, 0.0)
    if v0 * v0 / (2.0 * decel) <= d:
        t_hold, a = (d - v0 * v0 / (2.0 * decel)) / v0, decel
    else:
        t_hold, a = 0.0, min(v0 * v0 / (2.0 * d), MAX_DECEL) if d > 0 else MAX_DECEL
    out = []
    for t in times:
        if t <= t_hold:
            out.append(v0 * t)
        else:
            tb = min(t - t_hold, v0 / a)
            out.append(v0 * t_hold + v0 * tb - 0.5 * a * tb * tb)
    return out


def stop_distance(decision: Decision, reports: dict, front_offset: float = EGO_FRONT_OFFSET) -> Optional[float]:
    """Distance the ego may still travel before its stop point, if the decision has one."""
    if decision.template_id in RED_TEMPLATES:
        light = reports["light"]
        if light.visible:
            return light.distance_to_stop_line - STOP_LINE_BUFFER
    elif decision.template_id == "pedestrian_crossing":
        peds = _crossing_pedestrians(reports["objects"])
        if peds:
            return min(o.box.center_x - o.box.length / 2.0 for o in peds) - PEDESTRIAN_BUFFER - front_offset
    return None


def _route_line(scene: SceneTruth) -> Polyline:
    pts = list(scene.route_ahead)
    if len(pts) >= 2 and math.hypot(pts[-1][0] - pts[0][0], pts[-1][1] - pts[0][1]) > 1e-6:
        return Polyline(pts)
    x0, y0 = pts[0] if pts else (0.0, 0.0)
    return Polyline([(x0, y0), (x0 + 1.0, y0)])


def oracle_plan(decision: Decision, obs: Observation, reports: Optional[dict] = None) -> WaypointPlan:
    """Sample the route centerline at the distances reached under the speed profile."""
    scene = obs.scene
    if scene is None:
        raise ValueError("oracle_plan needs a scene observation")
    if reports is None:
        reports = {
            "objects": perceive_objects(scene),
            "light": perceive_light(scene),
            "sign": perceive_signs(scene),
            "lane": perceive_lane(scene),
        }
    if decision.is_stop:
        stop_at = stop_distance(decision, reports, scene.front_offset)
        if stop_at is None:
            dists = profile_distances(obs.ego_speed, 0.0)
        else:
            dists = profile_distances(obs.ego_speed, 0.0, stop_at=stop_at)
    else:
        dists = profile_distances(obs.ego_speed, decision.target_speed)
    line = _route_line(scene)
    reach = line.length
    pts = []
    for s in dists:
        if s <= reach:
            pts.append(line.point_at(s))
        else:
            # past the end of the known route: continue along the last heading
            h = line.heading_at(reach)
            ex, ey = line.point_at(reach)
            pts.append((ex + (s - reach) * math.cos(h), ey + (s - reach) * math.sin(h)))
    return WaypointPlan(tuple(pts))


# -- policies --------------------------------------------------------------------------


class Policy:
    """Stage handlers returning values; ``respond`` turns them into canonical text."""

    name = "base"

    def reset(self) -> None:
        pass

    def respond(self, stage: str, obs: Observation, prior: dict, bundle: PromptBundle) -> str:
        handler = {
            "objects": lambda: self.objects(obs),
            "light": lambda: self.light(obs, prior),
            "sign": lambda: self.sign(obs, prior),
            "lane": lambda: self.lane(obs, prior),
            "decision": lambda: self.decide(obs, prior),
            "waypoints": lambda: self.plan(prior["decision"], obs, prior),
        }[stage]
        return serialize_stage(stage, handler())

    def objects(self, obs: Observation) -> ObjectReport:
        raise NotImplementedError

    def light(self, obs: Observation, prior: dict) -> LightReport:
        raise NotImplementedError

    def sign(self, obs: Observation, prior: dict) -> SignReport:
        raise NotImplementedError

    def lane(self, obs: Observation, prior: dict) -> LaneReport:
        raise NotImplementedError

    def decide(self, obs: Observation, prior: dict) -> Decision:
        raise NotImplementedError

    def plan(self, decision: Decision, obs: Observation, prior: dict) -> WaypointPlan:
        raise NotImplementedError


class OraclePolicy(Policy):
    name = "oracle"
    attention = True

    def __init__(self):
        self.latch = StopLatch()

    def reset(self) -> None:
        self.latch = StopLatch()

    def _scene(self, obs: Observation) -> SceneTruth:
        if obs.scene is None:
            raise ValueError(f"{self.name} policy needs scene observations")
        return obs.scene

    def objects(self, obs):
        return perceive_objects(self._scene(obs), self.attention)

    def light(self, obs, prior):
        return perceive_light(self._scene(obs))

    def sign(self, obs, prior):
        return perceive_signs(self._scene(obs))

    def lane(self, obs, prior):
        return perceive_lane(self._scene(obs))

    def decide(self, obs, prior):
        d, self.latch = oracle_decide(
            prior, obs.ego_speed, obs.nav_command, obs.nav_preview, self.latch,
            attention=self.attention, front_offset=self._scene(obs).front_offset,
        )
        return d

    def plan(self, decision, obs, prior):
        return oracle_plan(decision, obs, prior)


class AblationPolicy(OraclePolicy):
    """No per-object attention: boxes are reported but never flagged."""

    name = "no-cot"
    attention = False


# -- remote bridge ---------------------------------------------------------------------


@dataclass(frozen=True)
class RemoteConfig:
    endpoint: str
    timeout_ms: int = 2000
    max_retries: int = 1
    max_degraded_ticks: int = 20


def scene_attachment(scene: SceneTruth) -> str:
    """Stand-in sensor frame: the rendered scene, base64-encoded."""
    return base64.b64encode(render_scene(scene).encode()).decode("ascii")


@dataclass
class RemotePolicy(Policy):
    cfg: RemoteConfig
    session: str = "session"
    name: str = "remote"
    _client: Optional[RemoteClient] = field(default=None, repr=False)

    def _get_client(self) -> RemoteClient:
        if self._client is None:
            self._client = RemoteClient(self.cfg)
        return self._client

    @property
    def timeouts(self) -> int:
        """Timed-out attempts so far on the current connection object."""
        return 0 if self._client is None else self._client.timeouts

    def reset(self) -> None:
        self.close()

    def close(self) -> None:
        if self._client is not None:
            self._client.close()
            self._client = None

    def respond(self, stage, obs, prior, bundle):
        try:
            return self._get_client().call(self.session, stage, bundle, obs.image_refs, obs.history.entries)
        except RemoteTimeout as exc:
            raise StageFailure(stage, "timeout", str(exc)) from None
        except RemoteProtocolError as exc:
            raise StageFailure(stage, "protocol", str(exc), exc.raw) from None
        except RemoteConnectionError as exc:
            raise StageFailure(stage, "connection", str(exc)) from None


def make_policy(name: str, endpoint: Optional[str] = None, session: str = "session", timeout_ms: int = 2000) -> Policy:
    if name == "oracle":
        return OraclePolicy()
    if name == "no-cot":
        return AblationPolicy()
    if name == "remote":
        if not endpoint:
            raise ValueError("remote policy needs an endpoint")
        return RemotePolicy(RemoteConfig(endpoint, timeout_ms), session)
    raise ValueError(f"unknown policy {name!r}")
