"""Detection, waypoint and closed-loop metrics, plus their table renderings."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .reports import WAYPOINT_TIMES
from .world import Box3

ADE_HORIZONS = (0.5, 1.0, 2.0, 3.0)

PENALTIES = {
    "collision_pedestrian": 0.50,
    "collision_vehicle": 0.60,
    "collision_static": 0.65,
    "red_light_violation": 0.70,
    "route_deviation": 0.80,
}
COLLISION_KINDS = ("collision_pedestrian", "collision_vehicle", "collision_static")


def iou3d(a: Box3, b: Box3) -> float:
    """Axis-aligned volumetric IoU."""
    inter = 1.0
    for c, e in (("center_x", "length"), ("center_y", "width"), ("center_z", "height")):
        ea, eb = getattr(a, e), getattr(b, e)
        # written via the center gap so that identical boxes give exactly 1
        overlap = min(ea, eb, (ea + eb) / 2.0 - abs(getattr(a, c) - getattr(b, c)))
        if overlap <= 0.0:
            return 0.0
        inter *= overlap
    union = a.length * a.width * a.height + b.length * b.width * b.height - inter
    return min(inter / union, 1.0)


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[tuple[int, int, float], ...]  # (pred index, gt index, iou)
    n_pred: int
    n_gt: int

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return self.n_pred - self.tp

    @property
    def fn(self) -> int:
        return self.n_gt - self.tp


def match_boxes(preds: Sequence[Box3], gts: Sequence[Box3], threshold: float = 0.5) -> MatchResult:
    """Greedy one-to-one matching in descending IoU order."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must be in (0, 1]")
    cands = []
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            v = iou3d(p, g)
            if v >= threshold:
                cands.append((-v, i, j))
    cands.sort()
    used_p, used_g, pairs = set(), set(), []
    for neg, i, j in cands:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        pairs.append((i, j, -neg))
    return MatchResult(tuple(pairs), len(preds), len(gts))


@dataclass(frozen=True)
class DetectionSummary:
    iou_sample: float
    iou_box: float
    precision: float
    recall: float
    pred_total: int
    gt_total: int


def detection_summary(matches: Iterable[MatchResult]) -> DetectionSummary:
    all_ious, per_sample = [], []
    tp = n_pred = n_gt = 0
    for m in matches:
        ious = [p[2] for p in m.pairs]
        all_ious.extend(ious)
        if ious:
            per_sample.append(sum(ious) / len(ious))
        tp += m.tp
        n_pred += m.n_pred
        n_gt += m.n_gt
    return DetectionSummary(
        iou_sample=sum(per_sample) / len(per_sample) if per_sample else 0.0,
        iou_box=sum(all_ious) / len(all_ious) if all_ious else 0.0,
        precision=tp / n_pred if n_pred else 0.0,
        recall=tp / n_gt if n_gt else 0.0,
        pred_total=n_pred,
        gt_total=n_gt,
    )


@dataclass(frozen=True)
class TrajectorySummary:
    ade_by_horizon: Mapping[float, float]
    fde: float


def _points(plan) -> Sequence[tuple[float, float]]:
    return plan.points if hasattr(plan, "points") else plan


def ade_fde(pred, gt) -> TrajectorySummary:
    p, g = _points(pred), _points(gt)
    if len(p) != len(WAYPOINT_TIMES) or len(g) != len(WAYPOINT_TIMES):
        raise ValueError(f"waypoint layout mismatch: expected {len(WAYPOINT_TIMES)} points, got {len(p)} and {len(g)}")
    err = [math.hypot(a[0] - b[0], a[1] - b[1]) for a, b in zip(p, g)]
    ade = {}
    for h in ADE_HORIZONS:
        sel = [e for e, t in zip(err, WAYPOINT_TIMES) if t <= h + 1e-9]
        ade[h] = sum(sel) / len(sel)
    return TrajectorySummary(ade, err[-1])


def mean_trajectory(summaries: Sequence[TrajectorySummary]) -> TrajectorySummary:
    if not summaries:
        return TrajectorySummary({h: 0.0 for h in ADE_HORIZONS}, 0.0)
    n = len(summaries)
    ade = {h: sum(s.ade_by_horizon[h] for s in summaries) / n for h in ADE_HORIZONS}
    return TrajectorySummary(ade, sum(s.fde for s in summaries) / n)


@dataclass(frozen=True)
class EpisodeResult:
    driving_score: float
    success: bool
    route_completion: float
    infractions: tuple = ()
    scenario: str = ""
    policy: str = ""
    terminal: str = ""


def score_episode(log, penalties: Mapping[str, float] = PENALTIES) -> EpisodeResult:
    """Driving score = 100 x completion x product of per-infraction penalties."""
    completion = min(max(log.route_completion, 0.0), 1.0)
    events = tuple(log.infractions)
    factor = 1.0
    for e in events:
        factor *= penalties.get(e.kind, 1.0)
    kinds = {e.kind for e in events}
    success = (
        completion >= 1.0
        and not kinds & set(COLLISION_KINDS)
        and "red_light_violation" not in kinds
        and "timeout" not in kinds
        and getattr(log, "terminal", "destination") == "destination"
    )
    return EpisodeResult(
        driving_score=100.0 * completion * factor,
        success=success,
        route_completion=completion,
        infractions=events,
        scenario=getattr(log, "scenario", ""),
        policy=getattr(log, "policy", ""),
        terminal=getattr(log, "terminal", "") or "",
    )


def aggregate_suite(results: Sequence[EpisodeResult]) -> tuple[float, float]:
    if not results:
        raise ValueError("aggregate_suite needs at least one result")
    ds = sum(r.driving_score for r in results) / len(results)
    sr = 100.0 * sum(1 for r in results if r.success) / len(results)
    return ds, sr


# -- tables ----------------------------------------------------------------------------

DETECTION_COLUMNS = ("IoU(sample)", "IoU(box)", "Precision", "Recall", "pred(total)", "gt(total)")
WAYPOINT_COLUMNS = ("0.5s", "1s", "2s", "3s", "FDE")
CLOSED_LOOP_COLUMNS = ("Driving Score↑", "Success Rate(%)↑")


def detection_row(s: DetectionSummary) -> list[str]:
    return [f"{s.iou_sample:.3f}", f"{s.iou_box:.3f}", f"{s.precision:.3f}", f"{s.recall:.3f}", str(s.pred_total), str(s.gt_total)]


def waypoint_row(s: TrajectorySummary) -> list[str]:
    return [f"{s.ade_by_horizon[h]:.3f}" for h in ADE_HORIZONS] + [f"{s.fde:.3f}"]


def closed_loop_row(ds: float, sr: float) -> list[str]:
    return [f"{ds:.1f}", f"{sr:.1f}"]


def _table(title: str, span: str, first: str, columns, rows, span_cols=None) -> str:
    """Aligned plain-text table with a spanning group header over the value columns."""
    header = [first, *columns]
    body = [[name, *vals] for name, vals in rows]
    widths = [max(len(r[k]) for r in [header, *body]) for k in range(len(header))]
    fmt_row = lambda r: " | ".join(c.ljust(w) if k == 0 else c.rjust(w) for k, (c, w) in enumerate(zip(r, widths)))  # noqa: E731
    n_span = len(columns) if span_cols is None else span_cols
    span_w = sum(widths[1 : 1 + n_span]) + 3 * (n_span - 1)
    lines = [title, " " * widths[0] + " | " + span.center(span_w), fmt_row(header)]
    lines.append("-" * len(lines[-1]))
    lines.extend(fmt_row(r) for r in body)
    return "\n".join(lines)


def render_detection_table(rows: Sequence[tuple[str, DetectionSummary]]) -> str:
    return _table(
        "Results of Object Recognition", "3D IoU ≥ 0.5", "Dataset", DETECTION_COLUMNS,
        [(n, detection_row(s)) for n, s in rows],
    )


def render_waypoint_table(rows: Sequence[tuple[str, TrajectorySummary]]) -> str:
    return _table(
        "Results of Waypoints Accuracy", "ADE", "Dataset", WAYPOINT_COLUMNS,
        [(n, waypoint_row(s)) for n, s in rows], span_cols=len(ADE_HORIZONS),
    )


def render_closed_loop_table(rows: Sequence[tuple[str, float, float]], suite: str = "catalog") -> str:
    return _table(
        "Results of Closed-loop Experiments", suite, "Method", CLOSED_LOOP_COLUMNS,
        [(n, closed_loop_row(ds, sr)) for n, ds, sr in rows],
    )


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)
