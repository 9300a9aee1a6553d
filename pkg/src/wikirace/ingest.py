"""Edge-list ingestion: parse TSV dumps into a playable SCC-restricted
graph, with a full accounting report and a reproducible snapshot checksum.
"""

from __future__ import annotations

import statistics
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graphcore import (
    PageGraph,
    build_csr,
    graph_checksum,
    largest_scc,
    normalize_title,
)

FORMATS = ("tsv-titles", "tsv-ids")


class IngestError(Exception):
    pass


@dataclass
class EdgeListSource:
    path: str | Path
    format: str = "tsv-titles"
    encoding: str = "utf-8"

    def __post_init__(self):
        if self.format not in FORMATS:
            raise IngestError(
                f"unknown edge-list format {self.format!r}; expected one of {FORMATS}"
            )
        if self.encoding.lower().replace("-", "") != "utf8":
            raise IngestError("only UTF-8 edge lists are supported")


@dataclass
class IngestReport:
    lines_read: int = 0
    edges_kept: int = 0
    edges_dropped: Counter = field(default_factory=Counter)
    nodes_total: int = 0
    scc_size: int = 0
    snapshot_checksum: str = ""
    warnings: list[str] = field(default_factory=list)

    @property
    def dropped_total(self) -> int:
        return sum(self.edges_dropped.values())


def _parse_lines(source: EdgeListSource, report: IngestReport):
    """Yield (src_field, dst_field) per well-formed edge line."""
    with open(source.path, encoding=source.encoding) as f:
        for line in f:
            report.lines_read += 1
            if line.startswith("#"):  # comment lines, common in public dumps
                continue
            stripped = line.rstrip("\n").rstrip("\r")
            if not stripped.strip():
                continue
            parts = stripped.split("\t")
            if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                report.edges_dropped["malformed"] += 1
                continue
            yield parts[0], parts[1]


def ingest(source: EdgeListSource) -> tuple[PageGraph, IngestReport]:
    """Parse an edge list, restrict to the largest strongly connected
    component, and return the canonical graph plus the accounting report.

    Deterministic for identical input bytes: node ids come from
    first-appearance order and canonicalization fixes everything else.
    """
    report = IngestReport()

    if source.format == "tsv-titles":
        ids: dict[str, int] = {}
        titles: list[str] = []
        edges: list[tuple[int, int]] = []

        def intern(raw: str) -> int:
            t = normalize_title(raw)
            i = ids.get(t)
            if i is None:
                i = len(titles)
                ids[t] = i
                titles.append(t)
            return i

        for a, b in _parse_lines(source, report):
            edges.append((intern(a), intern(b)))
            report.edges_kept += 1
        num_nodes = len(titles)
    else:  # tsv-ids
        raw_edges: list[tuple[int, int]] = []
        max_id = -1
        seen_ids: set[int] = set()
        for a, b in _parse_lines(source, report):
            try:
                u, v = int(a), int(b)
            except ValueError:
                report.edges_dropped["malformed"] += 1
                continue
            if u < 0 or v < 0:
                report.edges_dropped["malformed"] += 1
                continue
            raw_edges.append((u, v))
            report.edges_kept += 1
            seen_ids.add(u)
            seen_ids.add(v)
            max_id = max(max_id, u, v)
        if max_id >= 0 and len(seen_ids) != max_id + 1:
            # sparse id space: remap in ascending id order
            report.warnings.append(
                f"id space not dense ({len(seen_ids)} ids, max {max_id}); remapped"
            )
            remap = {old: new for new, old in enumerate(sorted(seen_ids))}
            raw_edges = [(remap[u], remap[v]) for u, v in raw_edges]
            titles = [str(old) for old in sorted(seen_ids)]
        else:
            titles = [str(i) for i in range(max_id + 1)]
        edges = raw_edges
        num_nodes = len(titles)

    if num_nodes == 0:
        raise IngestError(f"{source.path}: no usable edges; zero surviving nodes")

    report.nodes_total = num_nodes
    full = build_csr(edges, num_nodes, titles)
    graph, _ = largest_scc(full)
    report.scc_size = graph.num_nodes
    report.snapshot_checksum = graph_checksum(graph)
    return graph, report


@dataclass
class DegreeStats:
    min: int
    median: float
    mean: float
    max: int
    frac_over_50: float


def degree_stats(g: PageGraph) -> DegreeStats:
    """Out-degree summary; guides the per-step link-cap choice."""
    degs = np.diff(g.row_ptr.astype(np.int64))
    return DegreeStats(
        min=int(degs.min()),
        median=float(statistics.median(degs.tolist())),
        mean=float(degs.mean()),
        max=int(degs.max()),
        frac_over_50=float((degs > 50).mean()),
    )
