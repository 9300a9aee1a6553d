"""Task generation: difficulty splits, the world-knowledge probe set, the
training-pair export, and import of external human-play pairs.

All sampling follows the same scheme: draw a source uniformly, compute its
forward distance field once, draw a target uniformly from the nodes at the
required distance, and reject when a stratum is empty. Every emitted pair
is re-verified against the reverse-BFS oracle before it is accepted.
"""

from __future__ import annotations

import csv
import hashlib
import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .graphcore import (
    DistanceCache,
    PageGraph,
    PageId,
    distances_from,
    graph_checksum,
    has_edge,
    out_neighbors,
)

PROBE_CATEGORIES = ("connected", "distance-2", "distance-3", "distance-4", "reversed")
TRAIN_DISTANCES = (2, 3, 4, 5, 6)

PROBE_PROMPT = (
    "We are playing a game where you navigate Wikipedia from a starting page "
    "to a target page solely by clicking links on each page. \n"
    "\n"
    "Can you tell us if {source_page} contains a link to {target_page}? "
    "Reply with either 'yes' or 'no' in the following format:\\boxed{{}}."
)


class TaskGenError(Exception):
    pass


@dataclass(frozen=True)
class TaskInstance:
    source: PageId
    target: PageId
    optimal_length: int
    split: str
    snapshot_checksum: str

    def __post_init__(self):
        if self.source == self.target:
            raise TaskGenError("source and target must differ")


@dataclass(frozen=True)
class SplitSpec:
    name: str
    pair_count: int
    allowed_lengths: tuple[int, ...]

    def __post_init__(self):
        if self.pair_count % len(self.allowed_lengths):
            raise TaskGenError(
                f"{self.name}: {self.pair_count} pairs do not divide evenly "
                f"across lengths {self.allowed_lengths}"
            )

    @property
    def per_length(self) -> int:
        return self.pair_count // len(self.allowed_lengths)


EVAL_SPLITS = {
    "easy": SplitSpec("easy", 200, (3, 4)),
    "medium": SplitSpec("medium", 150, (5, 6)),
    "hard": SplitSpec("hard", 100, (7, 8)),
}


@dataclass(frozen=True)
class ProbeSample:
    source: PageId
    target: PageId
    category: str
    label: bool


@dataclass(frozen=True)
class TrainingPair:
    task: TaskInstance
    presented: tuple[PageId, ...]
    optimal_choice_index: int
    system_prompt: str
    user_prompt: str


# Rejection sampling is bounded so impossible strata fail loudly instead of
# spinning forever.
MAX_DRAWS_PER_PAIR = 2000


def _draw_at_distance(
    g: PageGraph, rng: random.Random, length: int, taken: set[tuple[int, int]]
) -> tuple[int, int] | None:
    """One sampling round: uniform source, uniform target among nodes at
    exactly ``length`` hops forward. None when the stratum is empty."""
    source = rng.randrange(g.num_nodes)
    dist = distances_from(g, source)
    candidates = np.flatnonzero(dist == length)
    if len(candidates) == 0:
        return None
    target = int(candidates[rng.randrange(len(candidates))])
    if (source, target) in taken:
        return None
    return source, target


def generate_split(
    g: PageGraph, cache: DistanceCache, spec: SplitSpec, seed: int
) -> list[TaskInstance]:
    """Exactly spec.pair_count tasks, evenly balanced across the allowed
    lengths, every distance re-verified against the reverse-BFS oracle."""
    rng = random.Random(seed)
    snapshot = graph_checksum(g)
    taken: set[tuple[int, int]] = set()
    tasks: list[TaskInstance] = []
    for length in sorted(spec.allowed_lengths):
        for _ in range(spec.per_length):
            for _attempt in range(MAX_DRAWS_PER_PAIR):
                pair = _draw_at_distance(g, rng, length, taken)
                if pair is None:
                    continue
                source, target = pair
                if int(cache.get(target).dist[source]) != length:
                    raise TaskGenError(
                        f"oracle disagreement at ({source}, {target}): "
                        f"forward BFS said {length}"
                    )
                taken.add(pair)
                tasks.append(
                    TaskInstance(source, target, length, spec.name, snapshot)
                )
                break
            else:
                raise TaskGenError(
                    f"{spec.name}: no pair at length {length} after "
                    f"{MAX_DRAWS_PER_PAIR} draws"
                )
    return tasks


def generate_probe_set(
    g: PageGraph, seed: int, per_category: int = 200
) -> list[ProbeSample]:
    """Five 200-sample categories: directly connected, three unconnected
    distance strata, and reversed-only links. Labels answer "does a direct
    edge source->target exist" and are checked at construction."""
    rng = random.Random(seed)
    taken: set[tuple[str, int, int]] = set()
    samples: list[ProbeSample] = []

    def emit(source: int, target: int, category: str, label: bool) -> None:
        if has_edge(g, source, target) != label:
            raise TaskGenError(
                f"label error in {category} at ({source}, {target})"
            )
        samples.append(ProbeSample(source, target, category, label))

    for category in PROBE_CATEGORIES:
        for _ in range(per_category):
            for _attempt in range(MAX_DRAWS_PER_PAIR):
                if category == "connected":
                    source = rng.randrange(g.num_nodes)
                    nbrs = out_neighbors(g, source)
                    if len(nbrs) == 0:
                        continue
                    target = int(nbrs[rng.randrange(len(nbrs))])
                    pair_label = True
                elif category == "reversed":
                    # edge target->source must exist, edge source->target must not
                    target = rng.randrange(g.num_nodes)
                    nbrs = out_neighbors(g, target)
                    if len(nbrs) == 0:
                        continue
                    source = int(nbrs[rng.randrange(len(nbrs))])
                    if has_edge(g, source, target):
                        continue
                    pair_label = False
                else:
                    length = int(category.split("-")[1])
                    pair = _draw_at_distance(g, rng, length, set())
                    if pair is None:
                        continue
                    source, target = pair
                    pair_label = False
                key = (category, source, target)
                if key in taken:
                    continue
                taken.add(key)
                emit(source, target, category, pair_label)
                break
            else:
                raise TaskGenError(
                    f"probe category {category!r} exhausted after "
                    f"{MAX_DRAWS_PER_PAIR} draws"
                )
    return samples


def render_probe_prompt(g: PageGraph, sample: ProbeSample) -> str:
    return PROBE_PROMPT.format(
        source_page=g.titles[sample.source], target_page=g.titles[sample.target]
    )


_PROBE_ANSWER_RE = re.compile(r"\\boxed\{\s*['\"]?(yes|no)['\"]?\s*\}", re.IGNORECASE)


def parse_probe_response(raw: str) -> bool | None:
    """Boxed yes/no only; the last box wins. None marks a discard."""
    answer = None
    for m in _PROBE_ANSWER_RE.finditer(raw):
        answer = m.group(1).lower() == "yes"
    return answer


def export_training_pairs(
    g: PageGraph,
    cache: DistanceCache,
    seed: int,
    count: int = 1000,
    exclude: Iterable[TaskInstance] = (),
) -> list[TrainingPair]:
    """Training pairs at distances 2..6, disjoint from the evaluation
    splits, each carrying the engine-filtered links at the source, the
    index of an optimal (distance d-1) choice, and the rendered prompt."""
    from .engine import GameConfig, GameState, filter_links, render_prompt, step_rng

    if count % len(TRAIN_DISTANCES):
        raise TaskGenError(
            f"count {count} does not divide evenly across distances {TRAIN_DISTANCES}"
        )
    rng = random.Random(seed)
    snapshot = graph_checksum(g)
    banned = {(t.source, t.target) for t in exclude}
    taken: set[tuple[int, int]] = set(banned)
    config = GameConfig()
    pairs: list[TrainingPair] = []

    for length in TRAIN_DISTANCES:
        for _ in range(count // len(TRAIN_DISTANCES)):
            for _attempt in range(MAX_DRAWS_PER_PAIR):
                pair = _draw_at_distance(g, rng, length, taken)
                if pair is None:
                    continue
                source, target = pair
                fld = cache.get(target)
                if int(fld.dist[source]) != length:
                    raise TaskGenError(
                        f"oracle disagreement at ({source}, {target})"
                    )
                taken.add(pair)
                task = TaskInstance(source, target, length, "train", snapshot)

                # present links exactly as the engine would at step 0 of an
                # episode seeded per pair
                pair_seed = int.from_bytes(
                    hashlib.sha256(f"{seed}:train:{len(pairs)}".encode()).digest()[:8],
                    "little",
                )
                presented = filter_links(
                    out_neighbors(g, source),
                    fld,
                    config.link_cap,
                    step_rng(pair_seed, 0),
                )
                best = min(
                    range(len(presented)), key=lambda i: (int(fld.dist[presented[i]]), i)
                )
                if int(fld.dist[presented[best]]) != length - 1:
                    raise TaskGenError(
                        f"no optimal link presented at ({source}, {target})"
                    )
                state = GameState(
                    task=task,
                    current=source,
                    history=[source],
                    step_index=0,
                    presented=presented,
                )
                system, user = render_prompt(state, g)
                pairs.append(
                    TrainingPair(
                        task=task,
                        presented=tuple(presented),
                        optimal_choice_index=best,
                        system_prompt=system,
                        user_prompt=user,
                    )
                )
                break
            else:
                raise TaskGenError(
                    f"training export starved at distance {length} "
                    f"(overlap exclusion too tight?)"
                )
    return pairs


@dataclass
class ImportReport:
    rows_read: int = 0
    imported: int = 0
    skipped: list[tuple[int, str]] = field(default_factory=list)


def import_pairs(
    path: str | Path, g: PageGraph, cache: DistanceCache
) -> tuple[list[TaskInstance], ImportReport]:
    """Resolve a CSV of source/target titles against this snapshot and
    recompute optimal lengths. Unresolvable rows are skipped, not fatal."""
    snapshot = graph_checksum(g)
    report = ImportReport()
    tasks: list[TaskInstance] = []
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not {"source", "target"} <= set(reader.fieldnames):
            raise TaskGenError(f"{path}: expected CSV header with source,target")
        for row_num, row in enumerate(reader, start=2):
            report.rows_read += 1
            source = g.resolve_title(row["source"] or "")
            target = g.resolve_title(row["target"] or "")
            if source is None or target is None:
                bad = row["source"] if source is None else row["target"]
                report.skipped.append((row_num, f"unknown title {bad!r}"))
                continue
            if source == target:
                report.skipped.append((row_num, "source equals target"))
                continue
            length = int(cache.get(target).dist[source])
            if length == 0xFFFFFFFF:
                report.skipped.append((row_num, "target unreachable"))
                continue
            tasks.append(TaskInstance(source, target, length, "imported", snapshot))
            report.imported += 1
    return tasks, report


# --- JSONL persistence --------------------------------------------------------

def save_tasks(tasks: Sequence[TaskInstance], path: str | Path, g: PageGraph) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for t in tasks:
            f.write(
                json.dumps(
                    {
                        "source": g.titles[t.source],
                        "target": g.titles[t.target],
                        "optimal_length": t.optimal_length,
                        "split": t.split,
                        "snapshot": t.snapshot_checksum,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_tasks(path: str | Path, g: PageGraph, strict: bool = True) -> list[TaskInstance]:
    """Rebind a task file to a loaded graph. With strict=True a snapshot
    mismatch is an error: distances are meaningless on another build."""
    snapshot = graph_checksum(g)
    tasks: list[TaskInstance] = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            d = json.loads(line)
            if strict and d["snapshot"] != snapshot:
                raise TaskGenError(
                    f"{path}: task snapshot {d['snapshot']} does not match "
                    f"graph {snapshot}"
                )
            source = g.resolve_title(d["source"])
            target = g.resolve_title(d["target"])
            if source is None or target is None:
                raise TaskGenError(f"{path}: unresolvable task titles {d}")
            tasks.append(
                TaskInstance(source, target, d["optimal_length"], d["split"], d["snapshot"])
            )
    return tasks


def save_probe_set(
    samples: Sequence[ProbeSample], path: str | Path, g: PageGraph
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    snapshot = graph_checksum(g)
    with open(path, "w", encoding="utf-8") as f:
        for s in samples:
            f.write(
                json.dumps(
                    {
                        "source": g.titles[s.source],
                        "target": g.titles[s.target],
                        "category": s.category,
                        "label": s.label,
                        "snapshot": snapshot,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_probe_set(path: str | Path, g: PageGraph) -> list[ProbeSample]:
    samples: list[ProbeSample] = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            d = json.loads(line)
            source = g.resolve_title(d["source"])
            target = g.resolve_title(d["target"])
            if source is None or target is None:
                raise TaskGenError(f"{path}: unresolvable probe titles {d}")
            samples.append(ProbeSample(source, target, d["category"], d["label"]))
    return samples


def save_training_pairs(
    pairs: Sequence[TrainingPair], path: str | Path, g: PageGraph
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for p in pairs:
            t = p.task
            f.write(
                json.dumps(
                    {
                        "source": g.titles[t.source],
                        "target": g.titles[t.target],
                        "optimal_length": t.optimal_length,
                        "split": t.split,
                        "snapshot": t.snapshot_checksum,
                        "presented": [g.titles[n] for n in p.presented],
                        "optimal_choice_index": p.optimal_choice_index,
                        "system_prompt": p.system_prompt,
                        "user_prompt": p.user_prompt,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
