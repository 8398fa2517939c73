"""Value types for the staged reasoning outputs and the instruction templates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .world import Box3

CATEGORIES = ("vehicle", "pedestrian", "cyclist", "static")
MOTIONS = ("stationary", "toward_ego", "away", "crossing_left", "crossing_right")
STAGES = ("objects", "light", "sign", "lane", "decision", "waypoints")

WAYPOINT_TIMES = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
N_WAYPOINTS = len(WAYPOINT_TIMES)

# One instruction per driving-scenario archetype; bracketed segments are slots.
TEMPLATES: dict[str, str] = {
    "red_light_approach": "Slow down to a complete stop and wait for the light to turn green.",
    "red_light_stationary": "Stop and wait for the light to turn green.",
    "green_light_turn": "With the green light, [Pay attention to xxx.], safely [turn left] and cross the intersection.",
    "pedestrian_crossing": "Stop and wait for pedestrians crossing the road ahead.",
    "lead_vehicle_20m": "[There is a vehicle ahead.] Maintain a safe following distance.",
    "junction_turn": "[Turn left] and [Pay attention to xxx.]",
    "lead_vehicle_lane_change": (
        "[Pay attention to the vehicle ahead changing lanes.] Reduce speed and maintain a safe following distance."
    ),
    "ego_lane_change": (
        "1. Lane change triggered by navigation command. 2. Risk management: Ensure safe lane change "
        "conditions, considering speed and position of surrounding vehicles. a. Utilize adjacent lanes in "
        "the same direction. b. Consider lanes in the opposite direction if necessary"
    ),
    "exit_ramp": "[Approaching exit ramp, reduce speed, and enhance environment observation.]",
    "default_driving": (
        "Normal driving behavior, maintaining vigilance and adhering to general traffic regulations."
    ),
}
TEMPLATE_IDS = tuple(TEMPLATES)
STOP_TEMPLATES = frozenset({"red_light_approach", "red_light_stationary", "pedestrian_crossing"})


@dataclass(frozen=True)
class DetectedObject:
    category: str
    box: Box3
    motion: str
    attend: bool = False
    reason: str = ""

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if self.motion not in MOTIONS:
            raise ValueError(f"unknown motion {self.motion!r}")
        if self.attend and not self.reason:
            raise ValueError("attended object needs a reason")


@dataclass(frozen=True)
class ObjectReport:
    objects: tuple[DetectedObject, ...] = ()


@dataclass(frozen=True)
class LightReport:
    visible: bool = False
    phase: Optional[str] = None
    distance_to_stop_line: Optional[float] = None

    def __post_init__(self):
        if self.visible:
            if self.phase not in ("red", "yellow", "green") or self.distance_to_stop_line is None:
                raise ValueError("visible light needs a phase and a distance")
        elif self.phase is not None or self.distance_to_stop_line is not None:
            raise ValueError("invisible light carries no phase or distance")


@dataclass(frozen=True)
class SignEntry:
    kind: str
    distance: float
    value: Optional[float] = None


@dataclass(frozen=True)
class SignReport:
    signs: tuple[SignEntry, ...] = ()


@dataclass(frozen=True)
class LaneReport:
    current_lane_id: str
    left_line: str
    right_line: str
    legal_left: bool
    legal_right: bool
    special: str = "none"

    def __post_init__(self):
        if self.legal_left and self.left_line != "dashed":
            raise ValueError("legal_left requires a dashed left line")
        if self.legal_right and self.right_line != "dashed":
            raise ValueError("legal_right requires a dashed right line")


@dataclass(frozen=True)
class Decision:
    template_id: str
    filled_text: str
    rationale: str = ""
    target_speed: float = 0.0

    def __post_init__(self):
        if self.template_id not in TEMPLATES:
            raise ValueError(f"unknown template {self.template_id!r}")
        if not self.target_speed >= 0:
            raise ValueError("target_speed must be >= 0")

    @property
    def is_stop(self) -> bool:
        return self.template_id in STOP_TEMPLATES


@dataclass(frozen=True)
class WaypointPlan:
    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.points) != N_WAYPOINTS:
            raise ValueError(f"expected {N_WAYPOINTS} waypoints, found {len(self.points)}")

    def first_point_feasible(self, v_max: float = 20.0) -> bool:
        return abs(self.points[0][0]) <= 0.5 * v_max * 0.5


def fill_template(template_id: str, slots: tuple[str, ...] = ()) -> str:
    """Substitute slot texts into a template's bracketed segments, in order."""
    text = TEMPLATES[template_id]
    out, i, k = [], 0, 0
    while True:
        j = text.find("[", i)
        if j < 0:
            out.append(text[i:])
            break
        e = text.index("]", j)
        if k >= len(slots):
            raise ValueError(f"template {template_id} needs more slots")
        out.append(text[i:j] + "[" + slots[k] + "]")
        k += 1
        i = e + 1
    if k != len(slots):
        raise ValueError(f"template {template_id} takes {k} slots, got {len(slots)}")
    return "".join(out)


def slot_count(template_id: str) -> int:
    return TEMPLATES[template_id].count("[")
