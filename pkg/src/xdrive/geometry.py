"""Planar geometry helpers: angle wrapping, map/ego frame transforms, polylines."""

from __future__ import annotations

import bisect
import math
from typing import Iterable, Sequence

Point = tuple[float, float]


def normalize_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.remainder(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    return a


def to_ego(ox: float, oy: float, heading: float, px: float, py: float) -> Point:
    """Express map point (px, py) in the frame anchored at (ox, oy) with the given heading."""
    dx, dy = px - ox, py - oy
    c, s = math.cos(heading), math.sin(heading)
    return (c * dx + s * dy, -s * dx + c * dy)


def to_map(ox: float, oy: float, heading: float, ex: float, ey: float) -> Point:
    c, s = math.cos(heading), math.sin(heading)
    return (ox + c * ex - s * ey, oy + s * ex + c * ey)


def rotate_to_ego(heading: float, vx: float, vy: float) -> Point:
    c, s = math.cos(heading), math.sin(heading)
    return (c * vx + s * vy, -s * vx + c * vy)


def _segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool:
    def orient(p, q, r):
        v = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
        return 0 if abs(v) < 1e-12 else (1 if v > 0 else -1)

    o1, o2 = orient(a, b, c), orient(a, b, d)
    o3, o4 = orient(c, d, a), orient(c, d, b)
    return o1 * o2 < 0 and o3 * o4 < 0


class Polyline:
    """Piecewise-linear curve parameterized by arc length."""

    def __init__(self, points: Iterable[Sequence[float]]):
        pts: list[Point] = []
        for p in points:
            q = (float(p[0]), float(p[1]))
            if pts and math.hypot(q[0] - pts[-1][0], q[1] - pts[-1][1]) < 1e-9:
                continue
            pts.append(q)
        if len(pts) < 2:
            raise ValueError("polyline needs at least two distinct points")
        self.points = pts
        self.cum = [0.0]
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            self.cum.append(self.cum[-1] + math.hypot(x1 - x0, y1 - y0))

    @property
    def length(self) -> float:
        return self.cum[-1]

    def _seg(self, s: float) -> int:
        i = bisect.bisect_right(self.cum, s) - 1
        return min(max(i, 0), len(self.points) - 2)

    def point_at(self, s: float) -> Point:
        s = min(max(s, 0.0), self.length)
        i = self._seg(s)
        (x0, y0), (x1, y1) = self.points[i], self.points[i + 1]
        seg = self.cum[i + 1] - self.cum[i]
        u = (s - self.cum[i]) / seg
        return (x0 + u * (x1 - x0), y0 + u * (y1 - y0))

    def heading_at(self, s: float) -> float:
        i = self._seg(min(max(s, 0.0), self.length))
        (x0, y0), (x1, y1) = self.points[i], self.points[i + 1]
        return math.atan2(y1 - y0, x1 - x0)

    def project(self, x: float, y: float, s_lo: float = 0.0, s_hi: float | None = None) -> tuple[float, float]:
        """Closest arc length in [s_lo, s_hi] and the signed lateral offset (left positive)."""
        if s_hi is None:
            s_hi = self.length
        i0 = self._seg(max(s_lo, 0.0))
        i1 = self._seg(min(s_hi, self.length))
        best = (float("inf"), 0.0, 0.0)
        for i in range(i0, i1 + 1):
            (x0, y0), (x1, y1) = self.points[i], self.points[i + 1]
            dx, dy = x1 - x0, y1 - y0
            seg2 = dx * dx + dy * dy
            u = ((x - x0) * dx + (y - y0) * dy) / seg2
            u = min(max(u, 0.0), 1.0)
            px, py = x0 + u * dx, y0 + u * dy
            d = math.hypot(x - px, y - py)
            if d < best[0] - 1e-12:
                cross = dx * (y - y0) - dy * (x - x0)
                lat = d if cross >= 0 else -d
                best = (d, self.cum[i] + u * math.sqrt(seg2), lat)
        return best[1], best[2]

    def is_simple(self) -> bool:
        pts = self.points
        n = len(pts) - 1
        for i in range(n):
            for j in range(i + 2, n):
                if _segments_intersect(pts[i], pts[i + 1], pts[j], pts[j + 1]):
                    return False
        return True

    def slice(self, s0: float, s1: float, step: float = 1.0) -> list[Point]:
        """Sample points every `step` metres from s0 to s1, both ends included."""
        s0 = min(max(s0, 0.0), self.length)
        s1 = min(max(s1, s0), self.length)
        out = [self.point_at(s0)]
        s = s0
        while s + step < s1 - 1e-9:
            s += step
            out.append(self.point_at(s))
        if s1 - s0 > 1e-9:
            out.append(self.point_at(s1))
        return out
