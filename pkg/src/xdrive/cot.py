"""Staged reasoning loop.

Each tick runs six stages in a fixed order (objects, light, sign, lane,
decision, waypoints).  Every stage sees the outputs of the stages before it in
the same tick plus the history of earlier ticks.  Stage outputs always travel
as canonical text: a policy produces text, the pipeline parses it, so the
value a policy "meant" and the value that gets logged can never disagree.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field
from typing import Iterator, Optional, Protocol

from .parse import ParseError, parse_stage, serialize_stage
from .reports import STAGES, Decision, LaneReport, LightReport, ObjectReport, SignReport, WaypointPlan
from .world import NavigationCommand, SceneTruth

HISTORY_DEPTH = 4

SYSTEM_PROMPT = (
    "You drive the ego vehicle. Coordinates are in the ego frame: x forward, y left, z up, "
    "metres, origin at the rear axle. Answer each question using only the requested format. "
    "Numbers use '.' as the decimal mark."
)

STAGE_PROMPTS = {
    "objects": (
        "List the dynamic and static objects around the ego. For each give the category, "
        "the box (x, y, z, length, width, height), the motion, whether it needs attention and why.\n"
        "Format: objects N, then one line per object: category (x, y, z, l, w, h) motion attend|ignore \"reason\""
    ),
    "light": (
        "Report the traffic light governing the ego lane.\n"
        "Format: light none | light red|yellow|green <distance to stop line>"
    ),
    "sign": (
        "Report the traffic signs that apply to the ego.\n"
        "Format: signs N, then per sign: kind [value] @ <distance>"
    ),
    "lane": (
        "Report the current lane, its line types, and which lane changes are legal.\n"
        "Format: lane ID left solid|dashed right solid|dashed legal_left yes|no legal_right yes|no special KIND"
    ),
    "decision": (
        "Choose one driving instruction, fill its bracketed parts, and give a target speed.\n"
        'Format: decision "<instruction>" target_speed <m/s> rationale "<text>"'
    ),
    "waypoints": (
        "Predict the ego position at 0.5, 1.0, 1.5, 2.0, 2.5 and 3.0 s.\n"
        "Format: (x1, y1), (x2, y2), (x3, y3), (x4, y4), (x5, y5), (x6, y6)"
    ),
}


class StageFailure(Exception):
    """A stage produced no usable output; the tick is aborted."""

    def __init__(self, stage: str, kind: str, message: str, raw: str = "", trace: Optional["TickTrace"] = None):
        super().__init__(f"{stage}: {kind}: {message}")
        self.stage = stage
        self.kind = kind  # parse, timeout, protocol, connection
        self.message = message
        self.raw = raw
        self.trace = trace


@dataclass(frozen=True)
class HistoryBuffer:
    """Ring of serialized past ticks, oldest first."""

    entries: tuple[str, ...] = ()
    capacity: int = HISTORY_DEPTH

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("history capacity must be >= 1")
        if len(self.entries) > self.capacity:
            raise ValueError("history holds more entries than its capacity")

    def __len__(self) -> int:
        return len(self.entries)


def serialize_tick(reports: dict, decision: Decision) -> str:
    parts = [serialize_stage(s, reports[s]) for s in ("objects", "light", "sign", "lane")]
    parts.append(serialize_stage("decision", decision))
    return "\n".join(parts)


def update_history(buffer: HistoryBuffer, tick) -> HistoryBuffer:
    """Append one tick, given as (reports, decision) or as already serialized text."""
    entry = tick if isinstance(tick, str) else serialize_tick(*tick)
    entries = (buffer.entries + (entry,))[-buffer.capacity :]
    return HistoryBuffer(entries, buffer.capacity)


@dataclass(frozen=True)
class Observation:
    t: float
    ego_speed: float
    nav_command: NavigationCommand
    nav_preview: Optional[NavigationCommand] = None
    scene: Optional[SceneTruth] = None
    image_refs: tuple[str, ...] = ()
    history: HistoryBuffer = field(default_factory=HistoryBuffer)

    def __post_init__(self):
        if (self.scene is None) == (not self.image_refs):
            raise ValueError("observation needs exactly one of scene or image_refs")


@dataclass(frozen=True)
class PromptBundle:
    system_prompt: str
    nav_text: str
    scene_text: str
    stage_prompt: str

    def text(self) -> str:
        return "\n\n".join((self.system_prompt, self.nav_text, self.scene_text, self.stage_prompt))


def _f(x: float) -> str:
    return f"{x:.3f}"


def render_scene(scene: SceneTruth) -> str:
    lines = []
    for o in scene.objects:
        b = o.box
        lines.append(
            f"object {o.id} {o.category} at ({_f(b.center_x)}, {_f(b.center_y)}, {_f(b.center_z)}) "
            f"size ({_f(b.length)}, {_f(b.width)}, {_f(b.height)}) velocity ({_f(o.velocity[0])}, {_f(o.velocity[1])})"
        )
    if scene.light is None:
        lines.append("traffic light: none")
    else:
        lines.append(f"traffic light: {scene.light.phase}, stop line {_f(scene.light.distance_to_stop_line)} m ahead")
    for s in scene.signs:
        value = f" {_f(s.value)}" if s.value is not None else ""
        lines.append(f"sign: {s.kind}{value} at {_f(s.distance)} m")
    ln = scene.lane
    lines.append(
        f"lane: {ln.lane_id} width {_f(ln.width)} left {ln.left_line} right {ln.right_line} special {ln.special}"
    )
    pts = scene.route_ahead[::5]
    lines.append("route: " + " ".join(f"({_f(x)}, {_f(y)})" for x, y in pts))
    return "\n".join(lines)


def render_prompts(obs: Observation, prior_stages: dict, stage: str) -> PromptBundle:
    """Build the deterministic prompt for one stage.

    History is not inlined; it travels alongside the prompt (``obs.history``).
    """
    idx = STAGES.index(stage)
    missing = [s for s in STAGES[:idx] if s not in prior_stages]
    if missing:
        raise ValueError(f"stage {stage} rendered before {', '.join(missing)}")
    nav = f"navigation: {obs.nav_command.kind}"
    if obs.nav_preview is not None:
        nav += f"; then {obs.nav_preview.kind}"
    head = f"speed: {obs.ego_speed:.1f} m/s"
    if obs.scene is not None:
        scene_text = head + "\n" + render_scene(obs.scene)
    else:
        refs = ", ".join(f"<image {i}>" for i in range(len(obs.image_refs)))
        scene_text = f"{head}\ncamera: {refs}"
    parts = []
    for s in STAGES[:idx]:
        parts.append(f"{s} report:\n{serialize_stage(s, prior_stages[s])}")
    parts.append(STAGE_PROMPTS[stage])
    return PromptBundle(SYSTEM_PROMPT, nav, scene_text, "\n\n".join(parts))


def observation_digest(obs: Observation) -> str:
    bundle = render_prompts(obs, {}, "objects")
    h = hashlib.sha256(bundle.text().encode())
    for entry in obs.history.entries:
        h.update(b"\x00" + entry.encode())
    return h.hexdigest()[:16]


class StagePolicy(Protocol):
    name: str

    def respond(self, stage: str, obs: Observation, prior: dict, bundle: PromptBundle) -> str: ...


@dataclass(frozen=True)
class StageRecord:
    stage: str
    seq: int
    prompt: str
    output: str


@dataclass(frozen=True)
class TickTrace:
    nav_text: str
    scene_text: str
    records: tuple[StageRecord, ...]


@dataclass(frozen=True)
class PipelineResult:
    objects: ObjectReport
    light: LightReport
    sign: SignReport
    lane: LaneReport
    decision: Decision
    waypoints: WaypointPlan
    trace: TickTrace

    @property
    def reports(self) -> dict:
        return {"objects": self.objects, "light": self.light, "sign": self.sign, "lane": self.lane}

    def __iter__(self):
        return iter((self.objects, self.light, self.sign, self.lane, self.decision, self.waypoints, self.trace))


def run_pipeline(policy: StagePolicy, obs: Observation, clock: Optional[Iterator[int]] = None) -> PipelineResult:
    """Run all stages in order; raises StageFailure carrying the partial trace."""
    clock = itertools.count() if clock is None else clock
    prior: dict = {}
    records: list[StageRecord] = []
    nav_text = scene_text = ""
    for stage in STAGES:
        bundle = render_prompts(obs, prior, stage)
        nav_text, scene_text = bundle.nav_text, bundle.scene_text
        seq = next(clock)
        try:
            raw = policy.respond(stage, obs, dict(prior), bundle)
        except StageFailure as exc:
            exc.trace = TickTrace(nav_text, scene_text, tuple(records))
            raise
        records.append(StageRecord(stage, seq, bundle.stage_prompt, raw))
        try:
            prior[stage] = parse_stage(stage, raw)
        except (ParseError, ValueError) as exc:
            raise StageFailure(
                stage, "parse", str(exc), raw, TickTrace(nav_text, scene_text, tuple(records))
            ) from None
    trace = TickTrace(nav_text, scene_text, tuple(records))
    return PipelineResult(*(prior[s] for s in STAGES), trace)
