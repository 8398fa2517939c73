"""Turn a directory of episode logs into metric tables, CSV files and figures."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path
from typing import Optional

from .metrics import (
    ADE_HORIZONS,
    CLOSED_LOOP_COLUMNS,
    DETECTION_COLUMNS,
    ade_fde,
    aggregate_suite,
    closed_loop_row,
    detection_row,
    detection_summary,
    match_boxes,
    mean_trajectory,
    render_closed_loop_table,
    render_detection_table,
    render_waypoint_table,
    score_episode,
    waypoint_row,
    write_csv,
)
from .parse import ParseError, parse_object_report, parse_waypoints
from .trace import EpisodeLog


def _stage_output(tick: dict, stage: str) -> Optional[str]:
    for rec in tick.get("stages", ()):
        if rec["stage"] == stage:
            return rec["output"]
    return None


def _boxes(text: Optional[str]):
    if text is None:
        return []
    try:
        return [o.box for o in parse_object_report(text).objects]
    except ParseError:
        return []


def episode_samples(log: EpisodeLog):
    """Per-tick detection matches and waypoint errors against the logged truth."""
    matches, trajs = [], []
    for tick in log.ticks:
        truth = tick["truth"]
        gts = _boxes(truth["objects"])
        matches.append(match_boxes(_boxes(_stage_output(tick, "objects")), gts))
        wp = _stage_output(tick, "waypoints")
        if wp is None or tick.get("status") != "ok":
            continue
        try:
            trajs.append(ade_fde(parse_waypoints(wp), parse_waypoints(truth["waypoints"])))
        except ParseError:
            continue
    return matches, trajs


def build_report(logs: list[EpisodeLog], out_dir, figures: bool = True, suite: str = "catalog") -> str:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    by_policy: dict[str, list[EpisodeLog]] = defaultdict(list)
    for lg in logs:
        by_policy[lg.policy].append(lg)
    policies = sorted(by_policy, key=lambda p: (p != "oracle", p))

    det_rows, wp_rows, cl_rows, episode_rows = [], [], [], []
    tracks: dict[str, dict[str, list]] = defaultdict(dict)
    speeds: dict[str, dict[str, list]] = defaultdict(dict)
    for pol in policies:
        matches, trajs, results = [], [], []
        for lg in sorted(by_policy[pol], key=lambda l: l.scenario):
            m, t = episode_samples(lg)
            matches.extend(m)
            trajs.extend(t)
            res = score_episode(lg)
            results.append(res)
            episode_rows.append(
                [lg.scenario, pol, res.terminal, f"{res.route_completion:.4f}", f"{res.driving_score:.2f}",
                 "yes" if res.success else "no", ";".join(e.kind for e in res.infractions)]
            )
            tracks[lg.scenario][pol] = [(tk["ego"]["x"], tk["ego"]["y"]) for tk in lg.ticks]
            speeds[lg.scenario][pol] = [(tk["t"], tk["ego"]["speed"]) for tk in lg.ticks]
        det_rows.append((pol, detection_summary(matches)))
        wp_rows.append((pol, mean_trajectory(trajs)))
        ds, sr = aggregate_suite(results)
        cl_rows.append((pol, ds, sr))

    text = "\n\n".join(
        (
            render_detection_table(det_rows),
            render_waypoint_table(wp_rows),
            render_closed_loop_table(cl_rows, suite),
        )
    )
    (out / "report.txt").write_text(text + "\n", encoding="utf-8")
    write_csv(out / "detection.csv", ("policy", *DETECTION_COLUMNS), [[p, *detection_row(s)] for p, s in det_rows])
    write_csv(
        out / "waypoints.csv",
        ("policy", *(f"ADE {h:g}s" for h in ADE_HORIZONS), "FDE"),
        [[p, *waypoint_row(s)] for p, s in wp_rows],
    )
    write_csv(out / "closed_loop.csv", ("policy", *CLOSED_LOOP_COLUMNS), [[p, *closed_loop_row(d, s)] for p, d, s in cl_rows])
    write_csv(
        out / "episodes.csv",
        ("scenario", "policy", "terminal", "route_completion", "driving_score", "success", "infractions"),
        episode_rows,
    )
    if figures:
        from .plotting import plot_closed_loop, plot_speed_profiles, plot_trajectories

        plot_trajectories(tracks, out / "trajectories.png")
        plot_speed_profiles(speeds, out / "speeds.png")
        plot_closed_loop(cl_rows, out / "closed_loop.png")
    return text
