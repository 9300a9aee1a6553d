"""Pure trajectory-log analytics: success rate, suboptimal steps, loop
statistics, the loop-vs-success regression, probe F1, and report rendering.

Every function here is a pure function of parsed logs, so recomputing a
report from reloaded JSONL reproduces the in-run numbers exactly.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .engine import GameTrajectory

SPLIT_ORDER = {"easy": 0, "medium": 1, "hard": 2}


class MetricsError(Exception):
    pass


def success_rate(trajs: Sequence[GameTrajectory]) -> float:
    if not trajs:
        raise MetricsError("success_rate over zero trajectories")
    return sum(t.outcome == "success" for t in trajs) / len(trajs)


def suboptimal_steps(traj: GameTrajectory) -> int:
    """Excess steps over the oracle optimum; defined only for successes."""
    if traj.outcome != "success":
        raise MetricsError("suboptimal_steps is defined only for successes")
    return traj.steps_taken - traj.optimal_length


@dataclass(frozen=True)
class LoopStats:
    loop_frequency: float
    recovery_rate: float | None     # None when nothing looped
    avg_max_visitation: float


def _max_visits(traj: GameTrajectory) -> int:
    return max(Counter(traj.history).values())


def loop_stats(trajs: Sequence[GameTrajectory]) -> LoopStats:
    """A trajectory loops iff some page appears at least twice in its
    history. Recovery conditions on looping trajectories only."""
    if not trajs:
        raise MetricsError("loop_stats over zero trajectories")
    looping = [t for t in trajs if _max_visits(t) >= 2]
    recovery = None
    if looping:
        recovery = sum(t.outcome == "success" for t in looping) / len(looping)
    return LoopStats(
        loop_frequency=len(looping) / len(trajs),
        recovery_rate=recovery,
        avg_max_visitation=sum(_max_visits(t) for t in trajs) / len(trajs),
    )


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    ci_low: float
    ci_high: float
    n: int


def linear_fit(points: Sequence[tuple[float, float]]) -> FitResult:
    """Ordinary least squares with a two-sided 95% slope interval from the
    t-distribution at n-2 degrees of freedom."""
    if len(points) < 3:
        raise MetricsError("linear_fit needs at least 3 points")
    x = np.array([p[0] for p in points], dtype=np.float64)
    y = np.array([p[1] for p in points], dtype=np.float64)
    sxx = float(np.sum((x - x.mean()) ** 2))
    if sxx == 0.0:
        raise MetricsError("linear_fit needs non-constant x")
    slope = float(np.sum((x - x.mean()) * (y - y.mean())) / sxx)
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    dof = len(points) - 2
    se = float(np.sqrt(np.sum(resid**2) / dof / sxx))
    half = float(stats.t.ppf(0.975, dof)) * se
    return FitResult(slope, intercept, slope - half, slope + half, len(points))


@dataclass(frozen=True)
class ProbeScore:
    precision: float
    recall: float
    f1: float
    discarded: int


def probe_f1(
    labels: Sequence[bool], predictions: Sequence[bool | None]
) -> ProbeScore:
    """F1 over the positive (connected) class. None predictions mark
    unparseable responses and are discarded before scoring."""
    if len(labels) != len(predictions):
        raise MetricsError("labels and predictions differ in length")
    pairs = [(l, p) for l, p in zip(labels, predictions) if p is not None]
    discarded = len(labels) - len(pairs)
    if not pairs:
        raise MetricsError("every probe response was discarded")
    tp = sum(1 for l, p in pairs if l and p)
    fp = sum(1 for l, p in pairs if not l and p)
    fn = sum(1 for l, p in pairs if l and not p)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return ProbeScore(precision, recall, f1, discarded)


# --- report -------------------------------------------------------------------

@dataclass(frozen=True)
class ReportRow:
    split: str
    agent: str
    games: int
    success_rate: float
    suboptimal_mean: float | None   # None when the group has no successes
    parse_errors: int
    loop_frequency: float
    recovery_rate: float | None
    avg_max_visitation: float
    tokens_out_per_step: float
    cost_per_step: float | None


COLUMNS = (
    "split",
    "agent",
    "games",
    "success%",
    "suboptimal",
    "parse_err",
    "loop%",
    "recovery%",
    "max_visit",
    "tok_out/step",
    "cost/step",
)


def _group_key(traj: GameTrajectory, by: tuple[str, ...]) -> tuple[str, str]:
    split = traj.split if "split" in by else "*"
    agent = traj.agent if "agent" in by else "*"
    return split, agent


def build_report(
    trajs: Iterable[GameTrajectory],
    by: tuple[str, ...] = ("split", "agent"),
    include_abandoned: bool = False,
) -> list[ReportRow]:
    for key in by:
        if key not in ("split", "agent"):
            raise MetricsError(f"cannot group by {key!r}")
    kept = [
        t
        for t in trajs
        if include_abandoned or t.failure_reason != "abandoned"
    ]
    groups: dict[tuple[str, str], list[GameTrajectory]] = {}
    for t in kept:
        groups.setdefault(_group_key(t, by), []).append(t)

    rows = []
    for (split, agent), members in groups.items():
        successes = [t for t in members if t.outcome == "success"]
        subopt = (
            sum(suboptimal_steps(t) for t in successes) / len(successes)
            if successes
            else None
        )
        loops = loop_stats(members)
        total_steps = sum(len(t.steps) for t in members)
        tokens_out = sum(t.tokens_out for t in members)
        costs = [t.cost for t in members]
        cost_per_step = None
        if total_steps and all(c is not None for c in costs):
            cost_per_step = sum(costs) / total_steps
        rows.append(
            ReportRow(
                split=split,
                agent=agent,
                games=len(members),
                success_rate=success_rate(members),
                suboptimal_mean=subopt,
                parse_errors=sum(t.failure_reason == "parse_error" for t in members),
                loop_frequency=loops.loop_frequency,
                recovery_rate=loops.recovery_rate,
                avg_max_visitation=loops.avg_max_visitation,
                tokens_out_per_step=tokens_out / total_steps if total_steps else 0.0,
                cost_per_step=cost_per_step,
            )
        )
    rows.sort(key=lambda r: (SPLIT_ORDER.get(r.split, 99), r.split, r.agent))
    return rows


def _cell(value, kind: str) -> str:
    if value is None:
        return "N/A"
    if kind == "pct":
        return f"{100 * value:.1f}"
    if kind == "f2":
        return f"{value:.2f}"
    if kind == "money":
        return f"{value:.6f}"
    return str(value)


def render_table(rows: Sequence[ReportRow]) -> str:
    """Plain-text aligned table, one row per (split, agent) group."""
    grid = [list(COLUMNS)]
    for r in rows:
        grid.append(
            [
                r.split,
                r.agent,
                str(r.games),
                _cell(r.success_rate, "pct"),
                _cell(r.suboptimal_mean, "f2"),
                str(r.parse_errors),
                _cell(r.loop_frequency, "pct"),
                _cell(r.recovery_rate, "pct"),
                _cell(r.avg_max_visitation, "f2"),
                _cell(r.tokens_out_per_step, "f2"),
                _cell(r.cost_per_step, "money"),
            ]
        )
    widths = [max(len(row[i]) for row in grid) for i in range(len(COLUMNS))]
    lines = []
    for n, row in enumerate(grid):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def render_jsonl(rows: Sequence[ReportRow]) -> str:
    out = []
    for r in rows:
        out.append(
            json.dumps(
                {
                    "split": r.split,
                    "agent": r.agent,
                    "games": r.games,
                    "success_rate": r.success_rate,
                    "suboptimal_mean": r.suboptimal_mean,
                    "parse_errors": r.parse_errors,
                    "loop_frequency": r.loop_frequency,
                    "recovery_rate": r.recovery_rate,
                    "avg_max_visitation": r.avg_max_visitation,
                    "tokens_out_per_step": r.tokens_out_per_step,
                    "cost_per_step": r.cost_per_step,
                },
                ensure_ascii=False,
            )
        )
    return "\n".join(out) + ("\n" if out else "")
