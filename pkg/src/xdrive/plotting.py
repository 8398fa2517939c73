"""Matplotlib figures for reports (files only, no windows)."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _grid(n: int):
    ncols = min(5, max(1, n))
    nrows = math.ceil(n / ncols)
    fig, axes = plt.subplots(nrows, ncols, figsize=(3.2 * ncols, 3.0 * nrows), squeeze=False)
    for ax in list(axes.flat)[n:]:
        ax.axis("off")
    return fig, axes


def _finish(fig, axes, path) -> None:
    handles, labels = axes.flat[0].get_legend_handles_labels()
    if handles:
        fig.legend(handles, labels, loc="upper right", fontsize=8)
    fig.tight_layout(rect=(0, 0, 0.94, 1))
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_speed_profiles(episodes: dict, path) -> None:
    """episodes: scenario -> {policy: [(t, speed), ...]}."""
    names = sorted(episodes)
    fig, axes = _grid(len(names))
    for ax, name in zip(axes.flat, names):
        for policy in sorted(episodes[name]):
            pts = episodes[name][policy]
            if pts:
                ts, vs = zip(*pts)
                ax.plot(ts, vs, label=policy, linewidth=1.2)
        ax.set_title(name, fontsize=8)
        ax.set_xlabel("t [s]", fontsize=7)
        ax.set_ylabel("speed [m/s]", fontsize=7)
        ax.tick_params(labelsize=6)
    _finish(fig, axes, path)


def plot_trajectories(episodes: dict, path) -> None:
    """episodes: scenario -> {policy: [(x, y), ...]}; one panel per scenario."""
    names = sorted(episodes)
    fig, axes = _grid(len(names))
    for ax, name in zip(axes.flat, names):
        for policy in sorted(episodes[name]):
            pts = episodes[name][policy]
            if pts:
                xs, ys = zip(*pts)
                ax.plot(xs, ys, label=policy, linewidth=1.2)
        ax.set_title(name, fontsize=8)
        ax.set_aspect("equal", adjustable="datalim")
        ax.tick_params(labelsize=6)
    _finish(fig, axes, path)


def plot_closed_loop(rows, path) -> None:
    """rows: [(policy, driving_score, success_rate)]."""
    labels = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(1.6 * len(labels) + 2.5, 3.2))
    xs = range(len(labels))
    w = 0.38
    ax.bar([x - w / 2 for x in xs], [r[1] for r in rows], w, label="Driving Score")
    ax.bar([x + w / 2 for x in xs], [r[2] for r in rows], w, label="Success Rate (%)")
    ax.set_xticks(list(xs), labels)
    ax.set_ylim(0, 105)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
