"""Fixed (task, seed) states behind the frozen golden prompt files.

The goldens were captured from the first verified render and must never be
regenerated casually: they pin the prompt template byte-for-byte.
"""

from wikirace.engine import GameConfig, GameState, filter_links, step_rng
from wikirace.graphcore import build_csr, distances_to, out_neighbors
from wikirace.tasks import TaskInstance

TITLES = [
    "Alpha Centauri",   # 0
    "Berlin",           # 1
    "Coffee",           # 2
    "Dune (novel)",     # 3
    "Eiffel Tower",     # 4
    "Go (game)",        # 5
    "Hydrogen",         # 6
    "İstanbul",         # 7
    "Jazz",             # 8
    "Kraków",           # 9
]

EDGES = [
    # ring keeps everything strongly connected
    (0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 8), (8, 9), (9, 0),
    # chords
    (0, 3), (0, 5), (1, 4), (2, 7), (3, 8), (5, 2), (6, 1), (7, 0), (8, 4), (9, 5),
]


def golden_graph():
    return build_csr(EDGES, len(TITLES), TITLES)


def _state(g, source, target, history, seed, step_index, link_cap=50):
    fld = distances_to(g, target)
    task = TaskInstance(source, target, int(fld.dist[source]), "custom", "0" * 8)
    presented = filter_links(
        out_neighbors(g, history[-1]), fld, link_cap, step_rng(seed, step_index)
    )
    return GameState(
        task=task,
        current=history[-1],
        history=list(history),
        step_index=step_index,
        presented=presented,
    )


def golden_states(g):
    """Five fixed states: fresh game, mid-game, capped links, single link,
    long history with revisits and non-ASCII titles."""
    return [
        _state(g, source=0, target=6, history=[0], seed=7, step_index=0),
        _state(g, source=2, target=9, history=[2, 7, 0], seed=11, step_index=2),
        _state(g, source=0, target=8, history=[0], seed=3, step_index=0, link_cap=2),
        _state(g, source=3, target=6, history=[3, 4], seed=5, step_index=1),
        _state(
            g, source=7, target=9,
            history=[7, 0, 5, 2, 7, 8, 4, 5],  # walks real edges, revisits 7 and 5
            seed=13, step_index=7,
        ),
    ]
