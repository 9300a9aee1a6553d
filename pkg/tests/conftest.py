"""Shared fixtures: tiny reference graphs, random digraph generators, and
independent brute-force oracles the implementation is checked against.
"""

from __future__ import annotations

import random

import numpy as np
import pytest

from wikirace import graphcore
from wikirace.graphcore import UNREACHABLE, PageGraph, build_csr


def titles_for(n: int) -> list[str]:
    return [f"Page {i}" for i in range(n)]


def random_edges(n: int, density: float, seed: int) -> list[tuple[int, int]]:
    """Random digraph edges; may contain duplicates and self-loops on purpose."""
    rng = random.Random(seed)
    m = int(density * n * n)
    return [(rng.randrange(n), rng.randrange(n)) for _ in range(m)]


def naive_adjacency(edges, n) -> list[list[int]]:
    """Independent oracle for CSR construction: sorted deduped rows,
    self-loops dropped."""
    rows = [set() for _ in range(n)]
    for u, v in edges:
        if u != v:
            rows[u].add(v)
    return [sorted(r) for r in rows]


def floyd_warshall_hops(edges, n) -> np.ndarray:
    """All-pairs hop counts by repeated min-plus over the adjacency matrix."""
    INF = np.float64(np.inf)
    d = np.full((n, n), INF)
    np.fill_diagonal(d, 0.0)
    for u, v in edges:
        if u != v:
            d[u, v] = 1.0
    for k in range(n):
        d = np.minimum(d, d[:, k, None] + d[None, k, :])
    return d


def brute_force_scc_partition(edges, n) -> list[frozenset[int]]:
    """Mutual-reachability partition via boolean transitive closure."""
    reach = np.eye(n, dtype=bool)
    for u, v in edges:
        reach[u, v] = True
    for k in range(n):
        reach |= reach[:, k, None] & reach[None, k, :]
    mutual = reach & reach.T
    seen: set[int] = set()
    comps = []
    for i in range(n):
        if i in seen:
            continue
        comp = frozenset(int(j) for j in np.flatnonzero(mutual[i]))
        seen |= comp
        comps.append(comp)
    return comps


def dist_or_inf(field_value) -> float:
    return float("inf") if field_value == UNREACHABLE else float(field_value)


@pytest.fixture
def cycle3() -> PageGraph:
    # 0 -> 1 -> 2 -> 0
    return build_csr([(0, 1), (1, 2), (2, 0)], 3, titles_for(3))


@pytest.fixture
def cycle3_with_sink() -> PageGraph:
    # 3-cycle plus a dangling sink node reachable from the cycle
    return build_csr([(0, 1), (1, 2), (2, 0), (1, 3)], 4, titles_for(4))


def make_benchmark_graph(n: int = 10_000, chords_per_node: float = 2.0,
                         seed: int = 99) -> PageGraph:
    """Strongly connected synthetic corpus: a directed ring plus random
    chords. Average out-degree ~3 puts typical distances in the 5-10 hop
    range at n=10k, which supplies every split stratum the harness needs.
    """
    rng = random.Random(seed)
    edges = [(i, (i + 1) % n) for i in range(n)]
    for _ in range(int(chords_per_node * n)):
        u = rng.randrange(n)
        v = rng.randrange(n)
        edges.append((u, v))
    return build_csr(edges, n, titles_for(n))


@pytest.fixture(scope="session")
def benchmark_graph() -> PageGraph:
    return make_benchmark_graph()


@pytest.fixture(scope="session")
def benchmark_cache(benchmark_graph) -> graphcore.DistanceCache:
    return graphcore.DistanceCache(benchmark_graph, root=None, lru_size=2048)
