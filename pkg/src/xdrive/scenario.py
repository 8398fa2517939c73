"""Line-oriented scenario format.

A document is a sequence of sections, one record per line::

    # comment
    [meta]
    name = default_driving
    time_budget = 120
    ego_speed = 8

    [lanes]
    L1 points=0,0;200,0 width=3.5 left=solid right=solid left_nb=- right_nb=- special=none

    [route]
    lanes = L1
    command 0 follow

    [actors]
    P1 kind=pedestrian dims=0.6,0.6,1.7 script=0:70,-4.5;6.667:70,5.5 trigger=70,0,25

    [lights]
    TL1 pos=62,3 stop_line_s=60 cycle=15,3,30 clock=0

    [signs]
    speed_limit value=6 pos=80,-3 from=80

Light cycles are ``red,yellow,green`` seconds.  Actor scripts are
``time:x,y`` keyframes; with a trigger ``x,y,distance`` the times count from
activation.  See docs/scenario-format.md for the full grammar.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Optional

from .world import (
    ACTOR_KINDS,
    LANE_SPECIALS,
    LINE_TYPES,
    NAV_KINDS,
    PEDESTRIAN_SPEED_MAX,
    SIGN_KINDS,
    VEHICLE_SPEED_MAX,
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
    WorldConfig,
    WorldState,
    build_route_path,
    new_world,
)

__all__ = [
    "NavigationCommand",
    "ScenarioError",
    "ScenarioSpec",
    "ScenarioSyntaxError",
    "build_world",
    "load_scenario",
    "parse_scenario",
    "serialize_scenario",
]

SECTIONS = ("meta", "lanes", "route", "actors", "lights", "signs")
DEFAULT_TIME_BUDGET = 120.0


class ScenarioError(ValueError):
    """A document that is well formed but violates a scenario invariant."""


class ScenarioSyntaxError(ScenarioError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    lane_graph: LaneGraph
    route: Route
    actors: tuple[ActorState, ...] = ()
    lights: tuple[TrafficLightState, ...] = ()
    signs: tuple[TrafficSign, ...] = ()
    time_budget: float = DEFAULT_TIME_BUDGET
    success_speed_cap: Optional[float] = None
    ego_speed: float = 0.0
    ego_lateral: float = 0.0
    description: str = field(default="", compare=False)


def build_world(spec: ScenarioSpec, config: WorldConfig = WorldConfig()) -> WorldState:
    return new_world(
        spec.lane_graph,
        spec.route,
        actors=spec.actors,
        lights=spec.lights,
        signs=spec.signs,
        ego_speed=spec.ego_speed,
        ego_lateral=spec.ego_lateral,
        time_budget=spec.time_budget,
        config=config,
    )


# -- parsing -------------------------------------------------------------------------

_NUM = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_\-]*")


class _Line:
    def __init__(self, text: str, lineno: int):
        self.text = text
        self.lineno = lineno
        self.fields: list[tuple[str, int]] = []  # (token, 1-based column)
        for m in re.finditer(r"\S+", text):
            self.fields.append((m.group(0), m.start() + 1))

    def err(self, msg: str, col: int = 1) -> ScenarioSyntaxError:
        return ScenarioSyntaxError(msg, self.lineno, col)


def _num(tok: str, line: _Line, col: int) -> float:
    if not _NUM.fullmatch(tok):
        raise line.err(f"expected a number, found {tok!r}", col)
    v = float(tok)
    if not math.isfinite(v):
        raise line.err(f"number out of range {tok!r}", col)
    return v


def _nums(tok: str, line: _Line, col: int, n: Optional[int] = None) -> list[float]:
    vals = [_num(part, line, col) for part in tok.split(",")]
    if n is not None and len(vals) != n:
        raise line.err(f"expected {n} comma-separated numbers, found {len(vals)}", col)
    return vals


def _kv(line: _Line, start: int) -> dict[str, tuple[str, int]]:
    out = {}
    for tok, col in line.fields[start:]:
        if "=" not in tok:
            raise line.err(f"expected key=value, found {tok!r}", col)
        k, v = tok.split("=", 1)
        if not _IDENT.fullmatch(k):
            raise line.err(f"bad key {k!r}", col)
        if k in out:
            raise line.err(f"duplicate key {k!r}", col)
        out[k] = (v, col + len(k) + 1)
    return out


def _take(kv: dict, key: str, line: _Line, required: bool = True):
    if key not in kv:
        if required:
            raise line.err(f"missing key {key!r}", len(line.text) + 1)
        return None
    return kv.pop(key)


def _no_extra(kv: dict, line: _Line) -> None:
    if kv:
        k, (_, col) = next(iter(kv.items()))
        raise line.err(f"unknown key {k!r}", col - len(k) - 1)


def _enum(val: tuple[str, int], choices, what: str, line: _Line) -> str:
    v, col = val
    if v not in choices:
        raise line.err(f"unknown {what} {v!r}", col)
    return v


def _opt_id(val: Optional[tuple[str, int]], line: _Line) -> Optional[str]:
    if val is None or val[0] == "-":
        return None
    if not _IDENT.fullmatch(val[0]):
        raise line.err(f"bad lane id {val[0]!r}", val[1])
    return val[0]


def parse_scenario(text: str) -> ScenarioSpec:
    """Parse and validate a scenario document."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ScenarioSyntaxError("invalid UTF-8", 1, exc.start + 1) from None
    section = None
    meta: dict[str, str] = {}
    lanes: list[Lane] = []
    route_lanes: Optional[list[str]] = None
    commands: list[NavigationCommand] = []
    actors: list[ActorState] = []
    lights: list[TrafficLightState] = []
    signs: list[TrafficSign] = []
    seen_sections = set()

    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].rstrip()
        if not stripped.strip():
            continue
        line = _Line(stripped, lineno)
        head, hcol = line.fields[0]
        if head.startswith("["):
            m = re.fullmatch(r"\[([a-z]+)\]", stripped.strip())
            if not m or m.group(1) not in SECTIONS:
                raise line.err(f"unknown section header {stripped.strip()!r}", hcol)
            if m.group(1) in seen_sections:
                raise line.err(f"duplicate section [{m.group(1)}]", hcol)
            section = m.group(1)
            seen_sections.add(section)
            continue
        if section is None:
            raise line.err("record outside of any section", hcol)

        if section == "meta" or (section == "route" and head == "lanes"):
            m = re.fullmatch(r"\s*([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*?)\s*", stripped)
            if not m:
                raise line.err("expected 'key = value'", hcol)
            key, value = m.group(1), m.group(2)
            if section == "route":
                if route_lanes is not None:
                    raise line.err("duplicate route lanes", hcol)
                route_lanes = value.split()
                for lid in route_lanes:
                    if not _IDENT.fullmatch(lid):
                        raise line.err(f"bad lane id {lid!r}", stripped.index(lid) + 1)
                continue
            if key in meta:
                raise line.err(f"duplicate key {key!r}", hcol)
            meta[key] = (value, m.start(2) + 1, line)
            continue

        if section == "route":
            if head != "command" or len(line.fields) != 3:
                raise line.err("expected 'command <at_s> <kind>'", hcol)
            at_s = _num(line.fields[1][0], line, line.fields[1][1])
            kind = line.fields[2][0]
            if kind not in NAV_KINDS:
                raise line.err(f"unknown navigation command {kind!r}", line.fields[2][1])
            commands.append(NavigationCommand(at_s, kind))
        elif section == "lanes":
            if not _IDENT.fullmatch(head):
                raise line.err(f"bad lane id {head!r}", hcol)
            kv = _kv(line, 1)
            pv, pcol = _take(kv, "points", line)
            pts = []
            for chunk in pv.split(";"):
                pts.append(tuple(_nums(chunk, line, pcol, 2)))
            width = kv.pop("width", None)
            lane = Lane(
                id=head,
                centerline=tuple(pts),
                width=_num(width[0], line, width[1]) if width else 3.5,
                left_line=_enum(kv.pop("left", ("solid", 0)), LINE_TYPES, "line type", line),
                right_line=_enum(kv.pop("right", ("solid", 0)), LINE_TYPES, "line type", line),
                left_nb=_opt_id(kv.pop("left_nb", None), line),
                right_nb=_opt_id(kv.pop("right_nb", None), line),
                special=_enum(kv.pop("special", ("none", 0)), LANE_SPECIALS, "lane special", line),
            )
            _no_extra(kv, line)
            lanes.append(lane)
        elif section == "actors":
            if not _IDENT.fullmatch(head):
                raise line.err(f"bad actor id {head!r}", hcol)
            kv = _kv(line, 1)
            kind = _enum(_take(kv, "kind", line), ACTOR_KINDS, "actor kind", line)
            dv, dcol = _take(kv, "dims", line)
            dims = tuple(_nums(dv, line, dcol, 3))
            sv, scol = _take(kv, "script", line)
            keyframes = []
            for chunk in sv.split(";"):
                if ":" not in chunk:
                    raise line.err(f"expected time:x,y keyframe, found {chunk!r}", scol)
                tpart, xy = chunk.split(":", 1)
                keyframes.append((_num(tpart, line, scol), *_nums(xy, line, scol, 2)))
            trig = kv.pop("trigger", None)
            trigger = Trigger(*_nums(trig[0], line, trig[1], 3)) if trig else None
            hv = kv.pop("heading", None)
            heading = _num(hv[0], line, hv[1]) if hv else 0.0
            _no_extra(kv, line)
            script = Script(tuple(keyframes), trigger)
            x, y, h, v = script.sample(0.0, heading)
            actors.append(ActorState(head, kind, Pose(x, y, h, v), dims, script, heading))
        elif section == "lights":
            if not _IDENT.fullmatch(head):
                raise line.err(f"bad light id {head!r}", hcol)
            kv = _kv(line, 1)
            pv, pcol = _take(kv, "pos", line)
            pos = tuple(_nums(pv, line, pcol, 2))
            sv, scol = _take(kv, "stop_line_s", line)
            cv, ccol = _take(kv, "cycle", line)
            cycle = tuple(_nums(cv, line, ccol, 3))
            if min(cycle) <= 0:
                raise ScenarioError(f"light {head}: cycle durations must be > 0")
            clk = kv.pop("clock", None)
            _no_extra(kv, line)
            lights.append(
                TrafficLightState(
                    head, pos, _num(sv, line, scol), cycle, _num(clk[0], line, clk[1]) if clk else 0.0
                )
            )
        elif section == "signs":
            if head not in SIGN_KINDS:
                raise line.err(f"unknown sign kind {head!r}", hcol)
            kv = _kv(line, 1)
            pv, pcol = _take(kv, "pos", line)
            fv, fcol = _take(kv, "from", line)
            val = kv.pop("value", None)
            _no_extra(kv, line)
            value = _num(val[0], line, val[1]) if val else None
            if head == "speed_limit" and (value is None or value <= 0):
                raise ScenarioError("speed_limit sign needs value > 0")
            signs.append(TrafficSign(head, tuple(_nums(pv, line, pcol, 2)), _num(fv, line, fcol), value))

    return _assemble(meta, lanes, route_lanes, commands, actors, lights, signs)


def _assemble(meta, lanes, route_lanes, commands, actors, lights, signs) -> ScenarioSpec:
    def meta_num(key, default):
        if key not in meta:
            return default
        value, col, line = meta.pop(key)
        return _num(value, line, col)

    if "name" not in meta:
        raise ScenarioError("scenario needs a name in [meta]")
    name, ncol, nline = meta.pop("name")
    if not _IDENT.fullmatch(name):
        raise nline.err(f"bad scenario name {name!r}", ncol)
    time_budget = meta_num("time_budget", DEFAULT_TIME_BUDGET)
    cap = meta_num("success_speed_cap", None)
    ego_speed = meta_num("ego_speed", 0.0)
    ego_lateral = meta_num("ego_lateral", 0.0)
    description = meta.pop("description", ("", 0, None))[0]
    if meta:
        key = next(iter(meta))
        _, col, line = meta[key]
        raise line.err(f"unknown meta key {key!r}", 1)

    if time_budget <= 0:
        raise ScenarioError("time_budget must be > 0")
    if ego_speed < 0:
        raise ScenarioError("ego_speed must be >= 0")
    if not lanes:
        raise ScenarioError("scenario needs at least one lane")
    ids = [lane.id for lane in lanes]
    if len(set(ids)) != len(ids):
        raise ScenarioError("duplicate lane id")
    graph = LaneGraph(tuple(lanes))
    for lane in lanes:
        if lane.width <= 0:
            raise ScenarioError(f"lane {lane.id}: width must be > 0")
        try:
            poly = lane.polyline
        except ValueError:
            raise ScenarioError(f"lane {lane.id}: centerline needs two distinct points") from None
        if not poly.is_simple():
            raise ScenarioError(f"lane {lane.id}: centerline self-intersects")
        for side, back in (("left_nb", "right_nb"), ("right_nb", "left_nb")):
            nb = getattr(lane, side)
            if nb is None:
                continue
            if nb not in graph:
                raise ScenarioError(f"unknown lane id {nb}")
            if getattr(graph[nb], back) != lane.id:
                raise ScenarioError(f"adjacency not symmetric between {lane.id} and {nb}")

    if not route_lanes:
        raise ScenarioError("route needs at least one lane")
    for lid in route_lanes:
        if lid not in graph:
            raise ScenarioError(f"unknown lane id {lid}")
    for a, b in zip(commands, commands[1:]):
        if not b.at_s > a.at_s:
            raise ScenarioError("navigation command positions must be strictly increasing")
    route = Route(tuple(route_lanes), tuple(commands))
    try:
        build_route_path(graph, route)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None

    actor_ids = [a.id for a in actors]
    if len(set(actor_ids)) != len(actor_ids):
        raise ScenarioError("duplicate actor id")
    for a in actors:
        if min(a.dims) <= 0:
            raise ScenarioError(f"actor {a.id}: dims must be > 0")
        kf = a.script.keyframes
        for p, q in zip(kf, kf[1:]):
            if not q[0] > p[0]:
                raise ScenarioError(f"actor {a.id}: keyframe times must increase")
        vmax = {"vehicle": VEHICLE_SPEED_MAX, "pedestrian": PEDESTRIAN_SPEED_MAX, "static_obstacle": 0.0}[a.kind]
        if a.script.max_speed() > vmax + 1e-9:
            raise ScenarioError(f"actor {a.id}: scripted speed exceeds {vmax} m/s")
        if a.script.trigger is not None and a.script.trigger.distance <= 0:
            raise ScenarioError(f"actor {a.id}: trigger distance must be > 0")
    light_ids = [l.id for l in lights]
    if len(set(light_ids)) != len(light_ids):
        raise ScenarioError("duplicate light id")

    return ScenarioSpec(
        name=name,
        lane_graph=graph,
        route=route,
        actors=tuple(actors),
        lights=tuple(lights),
        signs=tuple(signs),
        time_budget=time_budget,
        success_speed_cap=cap,
        ego_speed=ego_speed,
        ego_lateral=ego_lateral,
        description=description,
    )


def load_scenario(path) -> ScenarioSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


# -- serialization -------------------------------------------------------------------


def _f(x: float) -> str:
    return repr(float(x))


def _pts(points) -> str:
    return ";".join(f"{_f(x)},{_f(y)}" for x, y in points)


def serialize_scenario(spec: ScenarioSpec) -> str:
    out = ["[meta]", f"name = {spec.name}"]
    if spec.description:
        out.append(f"description = {spec.description}")
    out.append(f"time_budget = {_f(spec.time_budget)}")
    if spec.success_speed_cap is not None:
        out.append(f"success_speed_cap = {_f(spec.success_speed_cap)}")
    out.append(f"ego_speed = {_f(spec.ego_speed)}")
    out.append(f"ego_lateral = {_f(spec.ego_lateral)}")

    out += ["", "[lanes]"]
    for lane in spec.lane_graph.lanes:
        out.append(
            f"{lane.id} points={_pts(lane.centerline)} width={_f(lane.width)} left={lane.left_line} "
            f"right={lane.right_line} left_nb={lane.left_nb or '-'} right_nb={lane.right_nb or '-'} "
            f"special={lane.special}"
        )

    out += ["", "[route]", "lanes = " + " ".join(spec.route.lane_ids)]
    for c in spec.route.commands:
        out.append(f"command {_f(c.at_s)} {c.kind}")

    if spec.actors:
        out += ["", "[actors]"]
        for a in spec.actors:
            script = ";".join(f"{_f(t)}:{_f(x)},{_f(y)}" for t, x, y in a.script.keyframes)
            rec = f"{a.id} kind={a.kind} dims={','.join(_f(d) for d in a.dims)} script={script}"
            if a.script.trigger is not None:
                tr = a.script.trigger
                rec += f" trigger={_f(tr.x)},{_f(tr.y)},{_f(tr.distance)}"
            if a.heading:
                rec += f" heading={_f(a.heading)}"
            out.append(rec)

    if spec.lights:
        out += ["", "[lights]"]
        for l in spec.lights:
            out.append(
                f"{l.id} pos={_f(l.position[0])},{_f(l.position[1])} stop_line_s={_f(l.stop_line_s)} "
                f"cycle={','.join(_f(c) for c in l.cycle)} clock={_f(l.phase_clock)}"
            )

    if spec.signs:
        out += ["", "[signs]"]
        for s in spec.signs:
            rec = s.kind
            if s.value is not None:
                rec += f" value={_f(s.value)}"
            rec += f" pos={_f(s.position[0])},{_f(s.position[1])} from={_f(s.applies_from_s)}"
            out.append(rec)
    return "\n".join(out) + "\n"
