"""Tolerant parsers and canonical serializers for the structured stage outputs.

Grammar summary::

    float   := ['+'|'-'] digits ['.' digits]
    tuple   := '(' float (',' float)* ')'
    list    := tuple ([','] tuple)*
    string  := JSON string literal

Whitespace (including newlines) between tokens is ignored everywhere.
Serializers emit floats with three decimals; they are the only producers of
canonical text for prompts, logs and the remote response contract.
"""

from __future__ import annotations

import difflib
import json
import math
import re
from dataclasses import dataclass
from typing import Union

from .reports import (
    CATEGORIES,
    MOTIONS,
    N_WAYPOINTS,
    TEMPLATES,
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
from .world import LANE_SPECIALS, LINE_TYPES, SIGN_KINDS, Box3

Text = Union[str, bytes]


class ParseError(ValueError):
    """Raised for any malformed input; ``offset`` is a byte offset into the UTF-8 text."""

    def __init__(self, message: str, offset: int = 0, raw: str = ""):
        super().__init__(f"{message} (at byte {offset})")
        self.message = message
        self.offset = offset
        self.raw = raw


class WaypointCountError(ParseError):
    def __init__(self, found: int, raw: str = ""):
        super().__init__(f"expected {N_WAYPOINTS}, found {found}", 0, raw)
        self.expected = N_WAYPOINTS
        self.found = found


class DecisionParseError(ParseError):
    def __init__(self, text: str, nearest: str):
        super().__init__(f"no instruction template matches; nearest is {nearest}", 0, text)
        self.nearest = nearest


# -- tokens --------------------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>[+-]?\d+(?:\.\d+)?)(?![\w.])
  | (?P<str>"(?:[^"\\\x00-\x1f]|\\.)*")
  | (?P<word>[A-Za-z_][A-Za-z0-9_\-]*)
  | (?P<punct>[(),@])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    value: str
    pos: int  # character offset


def _decode(text: Text) -> str:
    if isinstance(text, (bytes, bytearray)):
        try:
            return bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError("invalid UTF-8", exc.start) from None
    if not isinstance(text, str):
        raise ParseError(f"expected text, got {type(text).__name__}")
    return text


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8", "surrogatepass"))


def tokenize(text: str) -> list[Token]:
    out = []
    pos = 0
    n = len(text)
    while pos < n:
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", _byte_offset(text, pos), text)
        kind = m.lastgroup
        if kind != "ws":
            out.append(Token(kind, m.group(kind), pos))
        pos = m.end()
    return out


class _Cursor:
    def __init__(self, text: str):
        self.text = text
        self.toks = tokenize(text)
        self.i = 0

    def err(self, msg: str, tok: Token | None = None) -> ParseError:
        pos = tok.pos if tok is not None else (self.peek().pos if self.peek() else len(self.text))
        return ParseError(msg, _byte_offset(self.text, pos), self.text)

    def peek(self) -> Token | None:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def at_end(self) -> bool:
        return self.i >= len(self.toks)

    def next(self, what: str = "token") -> Token:
        tok = self.peek()
        if tok is None:
            raise self.err(f"unexpected end of input, expected {what}")
        self.i += 1
        return tok

    def punct(self, ch: str) -> Token:
        tok = self.next(repr(ch))
        if tok.kind != "punct" or tok.value != ch:
            raise self.err(f"expected {ch!r}, found {tok.value!r}", tok)
        return tok

    def accept(self, ch: str) -> bool:
        tok = self.peek()
        if tok is not None and tok.kind == "punct" and tok.value == ch:
            self.i += 1
            return True
        return False

    def keyword(self, word: str) -> Token:
        tok = self.next(repr(word))
        if tok.kind != "word" or tok.value != word:
            raise self.err(f"expected {word!r}, found {tok.value!r}", tok)
        return tok

    def word(self, choices=None, what: str = "word") -> str:
        tok = self.next(what)
        if tok.kind != "word":
            raise self.err(f"expected {what}, found {tok.value!r}", tok)
        if choices is not None and tok.value not in choices:
            raise self.err(f"unknown {what} {tok.value!r}", tok)
        return tok.value

    def number(self) -> float:
        tok = self.next("number")
        if tok.kind != "num":
            raise self.err(f"non-numeric token {tok.value!r}", tok)
        v = float(tok.value)
        if not math.isfinite(v):
            raise self.err(f"non-finite number {tok.value[:20]!r}", tok)
        return v

    def integer(self) -> int:
        tok = self.peek()
        v = self.number()
        if v != int(v) or v < 0 or "." in tok.value:
            raise self.err(f"expected a count, found {tok.value!r}", tok)
        return int(v)

    def string(self) -> str:
        tok = self.next("string")
        if tok.kind != "str":
            raise self.err(f"expected a quoted string, found {tok.value!r}", tok)
        try:
            return json.loads(tok.value)
        except ValueError:
            raise self.err("invalid string escape", tok) from None

    def yes_no(self) -> bool:
        return self.word(("yes", "no"), "yes/no") == "yes"

    def tuple_(self) -> tuple[list[float], Token]:
        start = self.punct("(")
        vals = [self.number()]
        while not self.accept(")"):
            self.punct(",")
            vals.append(self.number())
        return vals, start

    def end(self) -> None:
        if not self.at_end():
            tok = self.peek()
            raise self.err(f"unexpected trailing token {tok.value!r}", tok)


def fmt(x: float) -> str:
    s = f"{x:.3f}"
    return "0.000" if s == "-0.000" else s


def _tuple_text(vals) -> str:
    return "(" + ", ".join(fmt(v) for v in vals) + ")"


# -- boxes and waypoints -------------------------------------------------------------


def _box_from(cur: _Cursor) -> Box3:
    vals, start = cur.tuple_()
    if len(vals) != 6:
        raise cur.err(f"box tuple needs 6 values, found {len(vals)}", start)
    if min(vals[3:]) <= 0:
        raise cur.err("nonpositive box extent", start)
    return Box3(*vals)


def parse_boxes(text: Text) -> list[Box3]:
    """Read every ``(x, y, z, length, width, height)`` tuple in the text."""
    cur = _Cursor(_decode(text))
    boxes = []
    while not cur.at_end():
        if boxes:
            cur.accept(",")
        boxes.append(_box_from(cur))
    return boxes


def serialize_boxes(boxes) -> str:
    return ", ".join(_tuple_text(b.as_tuple()) for b in boxes)


def _points_from(cur: _Cursor, stop_words=()) -> list[tuple[float, float]]:
    pts = []
    while not cur.at_end():
        tok = cur.peek()
        if tok.kind == "word" and tok.value in stop_words:
            break
        if pts:
            cur.accept(",")
        vals, start = cur.tuple_()
        if len(vals) != 2:
            raise cur.err(f"waypoint tuple needs 2 values, found {len(vals)}", start)
        pts.append((vals[0], vals[1]))
    return pts


def parse_waypoints(text: Text) -> WaypointPlan:
    raw = _decode(text)
    cur = _Cursor(raw)
    pts = _points_from(cur)
    if len(pts) != N_WAYPOINTS:
        raise WaypointCountError(len(pts), raw)
    return WaypointPlan(tuple(pts))


def serialize_waypoints(plan: WaypointPlan) -> str:
    return ", ".join(_tuple_text(p) for p in plan.points)


# -- decisions -----------------------------------------------------------------------

_WS = re.compile(r"\s+")


def normalize_instruction(text: str) -> str:
    s = _WS.sub(" ", text).strip()
    s = re.sub(r"\[ ", "[", s)
    return re.sub(r" \]", "]", s)


def _template_regex(template: str) -> tuple[re.Pattern, int]:
    parts = re.split(r"\[[^\[\]]*\]", template)
    literal_len = sum(len(p) for p in parts)
    pattern = r"\[([^\[\]]+?)\]".join(re.escape(p) for p in parts)
    return re.compile(pattern), literal_len


_TEMPLATE_RES = {tid: _template_regex(text) for tid, text in TEMPLATES.items()}


def parse_decision(text: Text) -> tuple[str, tuple[str, ...]]:
    """Match instruction text against the templates; returns (template_id, slots)."""
    raw = _decode(text)
    norm = normalize_instruction(raw)
    best = None
    for tid, (rx, lit) in _TEMPLATE_RES.items():
        m = rx.fullmatch(norm)
        if m and (best is None or lit > best[2]):
            best = (tid, tuple(g.strip() for g in m.groups()), lit)
    if best is None:
        scores = {tid: difflib.SequenceMatcher(None, norm, t).ratio() for tid, t in TEMPLATES.items()}
        raise DecisionParseError(raw, max(scores, key=lambda k: (scores[k], k)))
    return best[0], best[1]


def serialize_decision(d: Decision) -> str:
    return (
        f"decision {json.dumps(d.filled_text, ensure_ascii=False)} "
        f"target_speed {fmt(d.target_speed)} rationale {json.dumps(d.rationale, ensure_ascii=False)}"
    )


def parse_decision_report(text: Text) -> Decision:
    raw = _decode(text)
    cur = _Cursor(raw)
    cur.keyword("decision")
    tok = cur.peek()
    instruction = cur.string()
    try:
        tid, slots = parse_decision(instruction)
    except DecisionParseError as exc:
        raise ParseError(exc.message, _byte_offset(raw, tok.pos), raw) from None
    cur.keyword("target_speed")
    speed_tok = cur.peek()
    speed = cur.number()
    if speed < 0:
        raise cur.err("target_speed must be >= 0", speed_tok)
    cur.keyword("rationale")
    rationale = cur.string()
    cur.end()
    return Decision(tid, fill_template(tid, slots), rationale, speed)


# -- stage reports -------------------------------------------------------------------


def serialize_object_report(r: ObjectReport) -> str:
    lines = [f"objects {len(r.objects)}"]
    for o in r.objects:
        flag = "attend" if o.attend else "ignore"
        lines.append(
            f"{o.category} {_tuple_text(o.box.as_tuple())} {o.motion} {flag} {json.dumps(o.reason, ensure_ascii=False)}"
        )
    return "\n".join(lines)


def parse_object_report(text: Text) -> ObjectReport:
    raw = _decode(text)
    cur = _Cursor(raw)
    cur.keyword("objects")
    n = cur.integer()
    objs = []
    for _ in range(n):
        tok = cur.peek()
        cat = cur.word(CATEGORIES, "category")
        box = _box_from(cur)
        motion = cur.word(MOTIONS, "motion")
        attend = cur.word(("attend", "ignore"), "attention flag") == "attend"
        reason = cur.string()
        if attend and not reason:
            raise cur.err("attended object needs a reason", tok)
        objs.append(DetectedObject(cat, box, motion, attend, reason))
    cur.end()
    return ObjectReport(tuple(objs))


def serialize_light_report(r: LightReport) -> str:
    if not r.visible:
        return "light none"
    return f"light {r.phase} {fmt(r.distance_to_stop_line)}"


def parse_light_report(text: Text) -> LightReport:
    cur = _Cursor(_decode(text))
    cur.keyword("light")
    phase = cur.word(("none", "red", "yellow", "green"), "light phase")
    if phase == "none":
        cur.end()
        return LightReport()
    d = cur.number()
    cur.end()
    return LightReport(True, phase, d)


def serialize_sign_report(r: SignReport) -> str:
    parts = [f"signs {len(r.signs)}"]
    for s in r.signs:
        if s.kind == "speed_limit":
            parts.append(f"speed_limit {fmt(s.value)} @ {fmt(s.distance)}")
        else:
            parts.append(f"{s.kind} @ {fmt(s.distance)}")
    return "\n".join(parts)


def parse_sign_report(text: Text) -> SignReport:
    cur = _Cursor(_decode(text))
    cur.keyword("signs")
    n = cur.integer()
    out = []
    for _ in range(n):
        kind = cur.word(SIGN_KINDS, "sign kind")
        value = None
        if kind == "speed_limit":
            tok = cur.peek()
            value = cur.number()
            if value <= 0:
                raise cur.err("speed limit must be > 0", tok)
        cur.punct("@")
        out.append(SignEntry(kind, cur.number(), value))
    cur.end()
    return SignReport(tuple(out))


def serialize_lane_report(r: LaneReport) -> str:
    yn = lambda b: "yes" if b else "no"  # noqa: E731
    return (
        f"lane {r.current_lane_id} left {r.left_line} right {r.right_line} "
        f"legal_left {yn(r.legal_left)} legal_right {yn(r.legal_right)} special {r.special}"
    )


def parse_lane_report(text: Text) -> LaneReport:
    cur = _Cursor(_decode(text))
    cur.keyword("lane")
    lane_id = cur.word(what="lane id")
    cur.keyword("left")
    left = cur.word(LINE_TYPES, "line type")
    cur.keyword("right")
    right = cur.word(LINE_TYPES, "line type")
    cur.keyword("legal_left")
    tok = cur.peek()
    legal_left = cur.yes_no()
    if legal_left and left != "dashed":
        raise cur.err("legal_left requires a dashed left line", tok)
    cur.keyword("legal_right")
    tok = cur.peek()
    legal_right = cur.yes_no()
    if legal_right and right != "dashed":
        raise cur.err("legal_right requires a dashed right line", tok)
    cur.keyword("special")
    special = cur.word(LANE_SPECIALS, "lane special")
    cur.end()
    return LaneReport(lane_id, left, right, legal_left, legal_right, special)


SERIALIZERS = {
    "objects": serialize_object_report,
    "light": serialize_light_report,
    "sign": serialize_sign_report,
    "lane": serialize_lane_report,
    "decision": serialize_decision,
    "waypoints": serialize_waypoints,
}
PARSERS = {
    "objects": parse_object_report,
    "light": parse_light_report,
    "sign": parse_sign_report,
    "lane": parse_lane_report,
    "decision": parse_decision_report,
    "waypoints": parse_waypoints,
}


def serialize_stage(stage: str, value) -> str:
    return SERIALIZERS[stage](value)


def parse_stage(stage: str, text: Text):
    return PARSERS[stage](text)
