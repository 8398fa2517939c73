"""Hypothesis strategies for stage values on the canonical 3-decimal grid."""

from __future__ import annotations

from hypothesis import strategies as st

from xdrive.reports import (
    CATEGORIES,
    MOTIONS,
    TEMPLATE_IDS,
    Decision,
    DetectedObject,
    LaneReport,
    LightReport,
    ObjectReport,
    SignEntry,
    SignReport,
    WaypointPlan,
    fill_template,
    slot_count,
)
from xdrive.world import LANE_SPECIALS, SIGN_KINDS, Box3


def grid(lo: float, hi: float):
    """Floats representable exactly by the three-decimal serializer."""
    return st.integers(int(lo * 1000), int(hi * 1000)).map(lambda k: k / 1000)


def positive(hi: float = 50.0):
    return grid(0.001, hi)


texts = st.text(
    st.characters(blacklist_categories=("Cs",), blacklist_characters="\x00"), max_size=30
)
slot_texts = st.text(
    st.characters(whitelist_categories=("Lu", "Ll", "Nd", "Zs"), blacklist_characters="[]"), min_size=1, max_size=20
).map(lambda s: " ".join(s.split())).filter(bool)


@st.composite
def boxes(draw):
    return Box3(draw(grid(-100, 100)), draw(grid(-100, 100)), draw(grid(-5, 5)), draw(positive()), draw(positive()), draw(positive()))


@st.composite
def waypoint_plans(draw):
    pts = draw(st.lists(st.tuples(grid(-100, 100), grid(-100, 100)), min_size=6, max_size=6))
    return WaypointPlan(tuple(pts))


@st.composite
def decisions(draw):
    tid = draw(st.sampled_from(TEMPLATE_IDS))
    slots = tuple(draw(slot_texts) for _ in range(slot_count(tid)))
    return Decision(tid, fill_template(tid, slots), draw(texts), draw(grid(0, 40)))


@st.composite
def detected_objects(draw):
    attend = draw(st.booleans())
    reason = draw(texts.filter(bool)) if attend else draw(texts)
    return DetectedObject(draw(st.sampled_from(CATEGORIES)), draw(boxes()), draw(st.sampled_from(MOTIONS)), attend, reason)


def object_reports():
    return st.lists(detected_objects(), max_size=5).map(lambda objs: ObjectReport(tuple(objs)))


def light_reports():
    visible = st.builds(
        lambda phase, d: LightReport(True, phase, d), st.sampled_from(("red", "yellow", "green")), grid(-10, 200)
    )
    return st.one_of(st.just(LightReport()), visible)


@st.composite
def sign_entries(draw):
    kind = draw(st.sampled_from(SIGN_KINDS))
    value = draw(positive(40)) if kind == "speed_limit" else None
    return SignEntry(kind, draw(grid(-50, 200)), value)


def sign_reports():
    return st.lists(sign_entries(), max_size=4).map(lambda s: SignReport(tuple(s)))


@st.composite
def lane_reports(draw):
    left = draw(st.sampled_from(("solid", "dashed")))
    right = draw(st.sampled_from(("solid", "dashed")))
    legal_left = left == "dashed" and draw(st.booleans())
    legal_right = right == "dashed" and draw(st.booleans())
    lane_id = draw(st.from_regex(r"[A-Za-z_][A-Za-z0-9_]{0,6}", fullmatch=True))
    return LaneReport(lane_id, left, right, legal_left, legal_right, draw(st.sampled_from(LANE_SPECIALS)))
