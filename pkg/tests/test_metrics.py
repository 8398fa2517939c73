from __future__ import annotations

import csv
import random
from dataclasses import dataclass

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import iou_reference
from xdrive.metrics import (
    ADE_HORIZONS,
    EpisodeResult,
    MatchResult,
    ade_fde,
    aggregate_suite,
    detection_row,
    detection_summary,
    iou3d,
    match_boxes,
    mean_trajectory,
    render_closed_loop_table,
    render_detection_table,
    render_waypoint_table,
    score_episode,
    waypoint_row,
    write_csv,
)
from xdrive.metrics import DetectionSummary, TrajectorySummary
from xdrive.world import Box3, Infraction

extent = st.floats(0.1, 10)
coord = st.floats(-20, 20)
box3 = st.builds(Box3, coord, coord, coord, extent, extent, extent)


def cube(x=0.0, y=0.0, z=0.0, size=2.0) -> Box3:
    return Box3(x, y, z, size, size, size)


# -- IoU ---------------------------------------------------------------------------------


def test_iou_identity_disjoint_and_shift():
    assert iou3d(cube(), cube()) == 1.0
    assert iou3d(cube(), cube(x=5)) == 0.0
    assert iou3d(cube(), cube(x=1)) == pytest.approx(1 / 3, abs=1e-12)


@given(box3, box3)
def test_iou_symmetric_bounded_and_matches_reference(a, b):
    v = iou3d(a, b)
    assert v == iou3d(b, a)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(iou_reference(a.as_tuple(), b.as_tuple()), abs=1e-9)


@given(box3)
def test_iou_self_is_one(a):
    assert iou3d(a, a) == 1.0


@given(box3, st.lists(st.floats(0, 20), min_size=2, max_size=6))
def test_iou_monotone_in_offset(a, offsets):
    offsets = sorted(offsets)
    vals = [iou3d(a, Box3(a.center_x + d, a.center_y, a.center_z, a.length, a.width, a.height)) for d in offsets]
    assert all(y <= x + 1e-12 for x, y in zip(vals, vals[1:]))


# -- matching ----------------------------------------------------------------------------


def test_single_perfect_match():
    m = match_boxes([cube()], [cube()])
    assert (m.tp, m.fp, m.fn) == (1, 0, 0)


def test_greedy_prefers_higher_iou():
    gt = Box3(0, 0, 0, 10, 1, 1)
    hi = Box3(1, 0, 0, 10, 1, 1)  # IoU 9/11
    lo = Box3(2.5, 0, 0, 10, 1, 1)  # IoU 7.5/12.5 = 0.6
    assert iou3d(hi, gt) == pytest.approx(9 / 11) and iou3d(lo, gt) == pytest.approx(0.6)
    m = match_boxes([lo, hi], [gt])
    assert m.pairs[0][:2] == (1, 0)
    assert (m.tp, m.fp, m.fn) == (1, 1, 0)


def test_below_threshold_unmatched():
    m = match_boxes([cube(x=1.5)], [cube()])
    assert (m.tp, m.fp, m.fn) == (0, 1, 1)


def test_threshold_validated():
    with pytest.raises(ValueError):
        match_boxes([], [], threshold=0.0)
    with pytest.raises(ValueError):
        match_boxes([], [], threshold=1.5)


@given(st.lists(box3, max_size=6), st.lists(box3, max_size=6), st.floats(0.05, 1.0))
def test_matching_invariants(preds, gts, thr):
    m = match_boxes(preds, gts, thr)
    assert m.tp <= min(len(preds), len(gts))
    assert all(v >= thr for _, _, v in m.pairs)
    assert len({i for i, _, _ in m.pairs}) == m.tp
    assert len({j for _, j, _ in m.pairs}) == m.tp
    assert m.tp + m.fp == len(preds) and m.tp + m.fn == len(gts)


# -- detection summary ---------------------------------------------------------------------


def test_summary_single_perfect_sample():
    s = detection_summary([match_boxes([cube()], [cube()])])
    assert (s.iou_sample, s.iou_box, s.precision, s.recall) == (1.0, 1.0, 1.0, 1.0)


def test_summary_sample_vs_box_averaging():
    a = MatchResult(((0, 0, 1.0),), 1, 1)
    b = MatchResult(((0, 0, 0.5), (1, 1, 0.5)), 2, 2)
    s = detection_summary([a, b])
    assert s.iou_sample == pytest.approx(0.75)
    assert s.iou_box == pytest.approx(2 / 3)


def test_summary_empty_counts_are_zero():
    s = detection_summary([MatchResult((), 0, 0)])
    assert (s.precision, s.recall, s.pred_total, s.gt_total) == (0.0, 0.0, 0, 0)


def test_detection_row_format():
    s = DetectionSummary(0.724, 0.806, 0.678, 0.673, 3165, 3191)
    assert " | ".join(detection_row(s)) == "0.724 | 0.806 | 0.678 | 0.673 | 3165 | 3191"


# -- trajectories ------------------------------------------------------------------------


PLAN = [(2.0 * k, 0.1 * k) for k in range(1, 7)]


def test_ade_zero_for_identical():
    s = ade_fde(PLAN, PLAN)
    assert all(v == 0.0 for v in s.ade_by_horizon.values()) and s.fde == 0.0


def test_ade_constant_offset():
    s = ade_fde([(x + 1, y) for x, y in PLAN], PLAN)
    assert all(v == pytest.approx(1.0) for v in s.ade_by_horizon.values())
    assert s.fde == pytest.approx(1.0)


def test_ade_horizon_selection():
    # errors 1..6 at 0.5 s .. 3 s
    s = ade_fde([(x + k + 1, y) for k, (x, y) in enumerate(PLAN)], PLAN)
    assert s.ade_by_horizon == pytest.approx({0.5: 1.0, 1.0: 1.5, 2.0: 2.5, 3.0: 3.5})
    assert s.fde == pytest.approx(6.0)


def test_ade_layout_mismatch():
    with pytest.raises(ValueError):
        ade_fde(PLAN[:5], PLAN[:5])


@given(st.lists(st.floats(0, 10), min_size=6, max_size=6))
def test_ade_nondecreasing_for_growing_errors(errs):
    errs = sorted(errs)
    s = ade_fde([(x + e, y) for (x, y), e in zip(PLAN, errs)], PLAN)
    vals = [s.ade_by_horizon[h] for h in ADE_HORIZONS]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))


def test_waypoint_row_format():
    s = TrajectorySummary({0.5: 0.679, 1.0: 0.837, 2.0: 1.128, 3.0: 1.488}, 2.472)
    assert " | ".join(waypoint_row(s)) == "0.679 | 0.837 | 1.128 | 1.488 | 2.472"


def test_mean_trajectory():
    a = TrajectorySummary({h: 1.0 for h in ADE_HORIZONS}, 2.0)
    b = TrajectorySummary({h: 3.0 for h in ADE_HORIZONS}, 4.0)
    m = mean_trajectory([a, b])
    assert m.fde == 3.0 and m.ade_by_horizon[2.0] == 2.0


# -- closed loop -------------------------------------------------------------------------


@dataclass
class FakeLog:
    route_completion: float
    infractions: tuple = ()
    terminal: str = "destination"
    scenario: str = "s"
    policy: str = "p"


def test_clean_episode():
    r = score_episode(FakeLog(1.0))
    assert r.driving_score == 100.0 and r.success


def test_red_light_penalty():
    r = score_episode(FakeLog(1.0, (Infraction("red_light_violation", 3.0),)))
    assert r.driving_score == pytest.approx(70.0) and not r.success


def test_pedestrian_collision_half_route():
    r = score_episode(FakeLog(0.5, (Infraction("collision_pedestrian", 3.0),), "fatal_collision"))
    assert r.driving_score == pytest.approx(25.0) and not r.success


def test_timeout_is_not_success():
    assert not score_episode(FakeLog(1.0, terminal="timeout")).success
    assert not score_episode(FakeLog(0.9)).success


KINDS = ["collision_pedestrian", "collision_vehicle", "collision_static", "red_light_violation", "route_deviation", "timeout"]


@given(st.floats(0, 1), st.lists(st.sampled_from(KINDS), max_size=6), st.data())
def test_score_bounds_and_monotone(completion, kinds, data):
    events = tuple(Infraction(k, float(i)) for i, k in enumerate(kinds))
    r = score_episode(FakeLog(completion, events))
    assert 0.0 <= r.driving_score <= 100.0
    if events:
        drop = data.draw(st.integers(0, len(events) - 1))
        fewer = events[:drop] + events[drop + 1 :]
        assert score_episode(FakeLog(completion, fewer)).driving_score >= r.driving_score


def test_aggregate_examples():
    ok = EpisodeResult(100.0, True, 1.0)
    bad = EpisodeResult(25.0, False, 0.5)
    assert aggregate_suite([ok, ok]) == (100.0, 100.0)
    assert aggregate_suite([ok, bad]) == (62.5, 50.0)
    with pytest.raises(ValueError):
        aggregate_suite([])


@given(st.lists(st.tuples(st.floats(0, 100), st.booleans()), min_size=1, max_size=10), st.randoms())
def test_success_rate_permutation_invariant(rows, rnd):
    results = [EpisodeResult(ds, ok, 1.0) for ds, ok in rows]
    shuffled = results[:]
    rnd.shuffle(shuffled)
    assert aggregate_suite(results)[1] == aggregate_suite(shuffled)[1]
    assert aggregate_suite(results)[0] == pytest.approx(aggregate_suite(shuffled)[0])


# -- tables ----------------------------------------------------------------------------


def test_table_headers():
    det = render_detection_table([("oracle", DetectionSummary(1, 1, 1, 1, 3, 3))])
    assert "3D IoU ≥ 0.5" in det
    assert "IoU(sample) | IoU(box) | Precision | Recall | pred(total) | gt(total)" in det
    wp = render_waypoint_table([("oracle", TrajectorySummary({h: 0.0 for h in ADE_HORIZONS}, 0.0))])
    assert "ADE" in wp and "0.5s | 1s | 2s | 3s | FDE" in wp.replace("  ", " ").replace("  ", " ")
    cl = render_closed_loop_table([("oracle", 100.0, 100.0)])
    assert "Driving Score↑ | Success Rate(%)↑" in cl
    assert [c.strip() for c in cl.splitlines()[-1].split("|")] == ["oracle", "100.0", "100.0"]

def test_write_csv(tmp_path):
    path = tmp_path / "t.csv"
    write_csv(path, ("a", "b"), [[1, 2], [3, 4]])
    assert list(csv.reader(path.open())) == [["a", "b"], ["1", "2"], ["3", "4"]]


def test_random_detection_summary_consistency():
    rng = random.Random(3)
    matches = []
    for _ in range(50):
        preds = [cube(rng.uniform(-5, 5), rng.uniform(-5, 5)) for _ in range(rng.randint(0, 4))]
        gts = [cube(rng.uniform(-5, 5), rng.uniform(-5, 5)) for _ in range(rng.randint(0, 4))]
        matches.append(match_boxes(preds, gts))
    s = detection_summary(matches)
    tp = sum(m.tp for m in matches)
    assert s.precision == pytest.approx(tp / s.pred_total)
    assert s.recall == pytest.approx(tp / s.gt_total)
