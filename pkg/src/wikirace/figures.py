"""Report figures rendered to image files: per-split success bars and the
loop-frequency vs success scatter with its fitted line.

Lives beside the CLI rather than in metrics, which stays a pure function
of the logs; everything here consumes already-computed report rows.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import MetricsError, ReportRow, SPLIT_ORDER, linear_fit


def success_by_split_figure(rows: Sequence[ReportRow], path: Path) -> None:
    splits = sorted(
        {r.split for r in rows}, key=lambda s: (SPLIT_ORDER.get(s, 99), s)
    )
    agents = sorted({r.agent for r in rows})
    by_key = {(r.split, r.agent): r.success_rate for r in rows}

    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.8 / max(len(agents), 1)
    for k, agent in enumerate(agents):
        xs = [i + k * width for i in range(len(splits))]
        ys = [100 * by_key.get((s, agent), 0.0) for s in splits]
        ax.bar(xs, ys, width=width, label=agent)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(splits))])
    ax.set_xticklabels(splits)
    ax.set_ylabel("success rate (%)")
    ax.set_ylim(0, 105)
    ax.set_title("Success rate by split")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def loops_vs_success_figure(rows: Sequence[ReportRow], path: Path) -> None:
    """One point per agent: mean loop frequency against mean success rate,
    with an OLS line when at least 3 agents spread along x."""
    agents = sorted({r.agent for r in rows})
    points = []
    for agent in agents:
        mine = [r for r in rows if r.agent == agent]
        x = sum(r.loop_frequency for r in mine) / len(mine)
        y = sum(r.success_rate for r in mine) / len(mine)
        points.append((x, y))

    fig, ax = plt.subplots(figsize=(6, 4.5))
    for agent, (x, y) in zip(agents, points):
        ax.scatter([x], [y], s=36)
        ax.annotate(agent, (x, y), fontsize=7, xytext=(4, 4),
                    textcoords="offset points")
    fitted = None
    if len(points) >= 3:
        try:
            fitted = linear_fit(points)
        except MetricsError:
            fitted = None
    if fitted is not None:
        xs = [min(p[0] for p in points), max(p[0] for p in points)]
        ys = [fitted.intercept + fitted.slope * x for x in xs]
        ax.plot(xs, ys, linestyle="--", linewidth=1,
                label=f"slope {fitted.slope:.2f}")
        ax.legend(fontsize=8)
    ax.set_xlabel("loop frequency")
    ax.set_ylabel("success rate")
    ax.set_title("Loops vs success (per-agent means)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_report_figures(rows: Sequence[ReportRow], out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if rows:
        p = out_dir / "success_by_split.png"
        success_by_split_figure(rows, p)
        written.append(p)
        p = out_dir / "loops_vs_success.png"
        loops_vs_success_figure(rows, p)
        written.append(p)
    return written
