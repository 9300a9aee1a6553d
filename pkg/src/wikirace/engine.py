"""Episode state machine: oracle-filtered link presentation, bit-exact
prompt rendering, response parsing, transition, termination, and the
one-step training reward.

Trajectory logs carry titles rather than node ids so they stay readable
and portable across graph rebuilds; the snapshot checksum pins them to
the exact build they came from.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .agents import Agent, AgentError, Observation, PrivilegedView
from .graphcore import DistanceField, PageGraph, PageId, out_neighbors
from .tasks import TaskInstance

SYSTEM_PROMPT = "You are a helpful assistant helping play the Wikipedia link game."

USER_TEMPLATE = (
    'You are playing a game where you start at Wikipedia page "{current_page}" '
    'and want to reach page "{target_page}" by clicking links.\n'
    "\n"
    "So far, you have visited the following pages in order:\n"
    "{history}\n"
    "\n"
    "You see the following possible links from the current page:\n"
    "\n"
    "{links}\n"
    "\n"
    "Which link should you click to get closer to the target? "
    "Reply with the number of your choice (0 to {max_choice_num})."
)

RETRY_REMINDER = "Reply with only a single integer between 0 and {max_choice_num}."

_BOXED_RE = re.compile(r"\\boxed\{\s*(\d+)\s*\}")
# standalone integer: not glued to a word, not a decimal part, not negated
_INT_RE = re.compile(r"(?<![\w.\-])(\d+)(?!\.?\d)(?![a-zA-Z_])")


class EngineError(Exception):
    pass


@dataclass(frozen=True)
class GameConfig:
    max_steps: int = 30
    link_cap: int = 50
    rng_seed: int = 0
    parse_retries: int = 2

    def __post_init__(self):
        if self.max_steps < 1:
            raise EngineError("max_steps must be >= 1")
        if self.link_cap < 1:
            raise EngineError("link_cap must be >= 1")


@dataclass
class GameState:
    task: TaskInstance
    current: PageId
    history: list[PageId]
    step_index: int
    presented: list[PageId]
    status: str = "running"          # running | success | failure
    failure_reason: str | None = None


@dataclass
class StepRecord:
    step_index: int
    page_before: str
    presented: list[str]
    raw_response: str
    chosen_index: int | None
    page_after: str | None
    tokens_in: int = 0
    tokens_out: int = 0
    latency: float = 0.0


@dataclass
class GameTrajectory:
    source: str
    target: str
    optimal_length: int
    split: str
    snapshot: str
    agent: str
    privileged: bool
    config: GameConfig
    outcome: str                     # success | failure
    failure_reason: str | None       # step_budget | parse_error | agent_error | abandoned
    steps_taken: int
    tokens_in: int
    tokens_out: int
    cost: float | None
    wall_time: float
    steps: list[StepRecord] = field(default_factory=list)

    @property
    def history(self) -> list[str]:
        pages = [self.source]
        pages.extend(s.page_after for s in self.steps if s.page_after is not None)
        return pages


def step_rng(seed: int, step_index: int) -> random.Random:
    """Per-step RNG: hashing (seed, step) keeps every step independent and
    any episode reproducible from its seed alone."""
    digest = hashlib.sha256(f"{seed}:{step_index}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "little"))


def filter_links(
    neighbors: Sequence[PageId] | np.ndarray,
    fld: DistanceField,
    cap: int,
    rng: random.Random,
) -> list[PageId]:
    """Keep the ``cap`` links with the smallest oracle distance to the
    field's target, then present them in uniformly random order.

    Ties at the truncation boundary break by ascending id so the kept set
    is deterministic; only the final order is random.
    """
    kept = [int(v) for v in neighbors]
    if len(kept) > cap:
        kept.sort(key=lambda v: (int(fld.dist[v]), v))
        kept = kept[:cap]
    rng.shuffle(kept)
    return kept


def render_prompt(state: GameState, g: PageGraph) -> tuple[str, str]:
    """Instantiate the step prompt. History is one title per line in visit
    order with the current page last."""
    if not state.presented:
        raise EngineError("cannot render a prompt with no presented links")
    history = "\n".join(g.titles[p] for p in state.history)
    links = "\n".join(
        f"{i}. {g.titles[p]}" for i, p in enumerate(state.presented)
    )
    user = USER_TEMPLATE.format(
        current_page=g.titles[state.current],
        target_page=g.titles[state.task.target],
        history=history,
        links=links,
        max_choice_num=len(state.presented) - 1,
    )
    return SYSTEM_PROMPT, user


def parse_choice(raw: str, max_index: int) -> int | None:
    """Extract the chosen link index from free-form text.

    A boxed integer takes precedence; otherwise the last standalone
    in-range integer wins. Returns None when nothing in range parses.
    """
    if max_index < 0:
        raise EngineError("max_index must be >= 0")
    boxed = [int(m) for m in _BOXED_RE.findall(raw) if int(m) <= max_index]
    if boxed:
        return boxed[-1]
    plain = [int(m) for m in _INT_RE.findall(raw) if int(m) <= max_index]
    if plain:
        return plain[-1]
    return None


def score_response(raw: str, optimal_index: int, max_index: int) -> float:
    """One-step training reward: formatted and correct 1.0, formatted but
    wrong 0.0, unformatted -0.5."""
    if optimal_index > max_index:
        raise EngineError("optimal_index exceeds max_index")
    choice = parse_choice(raw, max_index)
    if choice is None:
        return -0.5
    return 1.0 if choice == optimal_index else 0.0


def _observe(
    state: GameState, g: PageGraph, fld: DistanceField, privileged: bool
) -> Observation:
    system, user = render_prompt(state, g)
    view = None
    if privileged:
        view = PrivilegedView(
            presented_ids=tuple(state.presented),
            distances=tuple(int(fld.dist[p]) for p in state.presented),
            out_degrees=tuple(g.out_degree(p) for p in state.presented),
        )
    return Observation(
        system_text=system,
        user_text=user,
        max_index=len(state.presented) - 1,
        current_title=g.titles[state.current],
        target_title=g.titles[state.task.target],
        history_titles=tuple(g.titles[p] for p in state.history),
        presented_titles=tuple(g.titles[p] for p in state.presented),
        privileged=view,
    )


def run_episode(
    task: TaskInstance,
    agent: Agent,
    g: PageGraph,
    fld: DistanceField,
    config: GameConfig | None = None,
) -> GameTrajectory:
    """Play one game to termination and return its complete record."""
    config = config or GameConfig()
    if fld.target != task.target:
        raise EngineError(
            f"distance field targets {fld.target}, task targets {task.target}"
        )

    state = GameState(
        task=task,
        current=task.source,
        history=[task.source],
        step_index=0,
        presented=[],
    )
    steps: list[StepRecord] = []
    outcome, reason = "failure", "step_budget"
    cost_total, cost_missing = 0.0, False
    any_reply = False

    for step_index in range(config.max_steps):
        state.step_index = step_index
        rng = step_rng(config.rng_seed, step_index)
        state.presented = filter_links(
            out_neighbors(g, state.current), fld, config.link_cap, rng
        )
        obs = _observe(state, g, fld, agent.privileged)

        record = StepRecord(
            step_index=step_index,
            page_before=g.titles[state.current],
            presented=list(obs.presented_titles),
            raw_response="",
            chosen_index=None,
            page_after=None,
        )
        steps.append(record)

        choice = None
        attempt_obs = obs
        for attempt in range(config.parse_retries + 1):
            try:
                reply = agent.decide(attempt_obs)
            except AgentError:
                outcome, reason = "failure", "agent_error"
                break
            record.raw_response = reply.raw_text
            record.tokens_in += reply.tokens_in
            record.tokens_out += reply.tokens_out
            record.latency += reply.latency
            any_reply = True
            if reply.provider_cost is None:
                cost_missing = True
            else:
                cost_total += reply.provider_cost
            choice = parse_choice(reply.raw_text, obs.max_index)
            if choice is not None:
                break
            if attempt < config.parse_retries:
                reminder = RETRY_REMINDER.format(max_choice_num=obs.max_index)
                attempt_obs = Observation(
                    system_text=obs.system_text,
                    user_text=obs.user_text + "\n\n" + reminder,
                    max_index=obs.max_index,
                    current_title=obs.current_title,
                    target_title=obs.target_title,
                    history_titles=obs.history_titles,
                    presented_titles=obs.presented_titles,
                    privileged=obs.privileged,
                )
        if reason == "agent_error":
            break
        if choice is None:
            outcome, reason = "failure", "parse_error"
            break

        record.chosen_index = choice
        nxt = state.presented[choice]
        record.page_after = g.titles[nxt]
        state.history.append(nxt)
        state.current = nxt
        if nxt == task.target:
            outcome, reason = "success", None
            break

    state.status = outcome
    state.failure_reason = reason

    # cost is trusted only when every reply priced itself; mixing priced and
    # unpriced replies would under-report
    total_cost = cost_total if any_reply and not cost_missing else None

    tokens_in = sum(s.tokens_in for s in steps)
    tokens_out = sum(s.tokens_out for s in steps)
    wall_time = sum(s.latency for s in steps)

    return GameTrajectory(
        source=g.titles[task.source],
        target=g.titles[task.target],
        optimal_length=task.optimal_length,
        split=task.split,
        snapshot=task.snapshot_checksum,
        agent=agent.name,
        privileged=agent.privileged,
        config=config,
        outcome=outcome,
        failure_reason=reason,
        steps_taken=len(state.history) - 1,
        tokens_in=tokens_in,
        tokens_out=tokens_out,
        cost=total_cost,
        wall_time=wall_time,
        steps=steps,
    )


# --- trajectory persistence ---------------------------------------------------

def trajectory_to_dict(traj: GameTrajectory) -> dict:
    return {
        "task": {
            "source": traj.source,
            "target": traj.target,
            "optimal_length": traj.optimal_length,
            "split": traj.split,
        },
        "snapshot": traj.snapshot,
        "agent": {"name": traj.agent, "privileged": traj.privileged},
        "config": {
            "max_steps": traj.config.max_steps,
            "link_cap": traj.config.link_cap,
            "rng_seed": traj.config.rng_seed,
            "parse_retries": traj.config.parse_retries,
        },
        "outcome": traj.outcome,
        "failure_reason": traj.failure_reason,
        "steps_taken": traj.steps_taken,
        "totals": {
            "tokens_in": traj.tokens_in,
            "tokens_out": traj.tokens_out,
            "cost": traj.cost,
            "wall_time": traj.wall_time,
        },
        "steps": [
            {
                "step_index": s.step_index,
                "page_before": s.page_before,
                "presented": s.presented,
                "raw_response": s.raw_response,
                "chosen_index": s.chosen_index,
                "page_after": s.page_after,
                "tokens_in": s.tokens_in,
                "tokens_out": s.tokens_out,
                "latency": s.latency,
            }
            for s in traj.steps
        ],
    }


def trajectory_from_dict(d: dict) -> GameTrajectory:
    cfg = d["config"]
    totals = d["totals"]
    return GameTrajectory(
        source=d["task"]["source"],
        target=d["task"]["target"],
        optimal_length=d["task"]["optimal_length"],
        split=d["task"]["split"],
        snapshot=d["snapshot"],
        agent=d["agent"]["name"],
        privileged=d["agent"]["privileged"],
        config=GameConfig(
            max_steps=cfg["max_steps"],
            link_cap=cfg["link_cap"],
            rng_seed=cfg["rng_seed"],
            parse_retries=cfg["parse_retries"],
        ),
        outcome=d["outcome"],
        failure_reason=d["failure_reason"],
        steps_taken=d["steps_taken"],
        tokens_in=totals["tokens_in"],
        tokens_out=totals["tokens_out"],
        cost=totals["cost"],
        wall_time=totals["wall_time"],
        steps=[
            StepRecord(
                step_index=s["step_index"],
                page_before=s["page_before"],
                presented=s["presented"],
                raw_response=s["raw_response"],
                chosen_index=s["chosen_index"],
                page_after=s["page_after"],
                tokens_in=s["tokens_in"],
                tokens_out=s["tokens_out"],
                latency=s["latency"],
            )
            for s in d["steps"]
        ],
    )


def trajectory_line(traj: GameTrajectory) -> str:
    return json.dumps(trajectory_to_dict(traj), ensure_ascii=False)


def save_trajectories(trajs: Sequence[GameTrajectory], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for t in trajs:
            f.write(trajectory_line(t) + "\n")


def load_trajectories(path: str | Path) -> list[GameTrajectory]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                out.append(trajectory_from_dict(json.loads(line)))
    return out
