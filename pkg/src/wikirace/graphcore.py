"""Immutable CSR page graph: construction, SCC extraction, BFS distance
oracles, and bit-exact binary caching.

All node ids are dense unsigned integers in [0, num_nodes). Edges are
directed hyperlinks. Distances are hop counts; ``UNREACHABLE`` marks the
absence of a directed path.
"""

from __future__ import annotations

import os
import struct
import threading
import zlib
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

PageId = int

#: Sentinel distance for "no directed path" (max representable u32).
UNREACHABLE = np.uint32(0xFFFFFFFF)

GRAPH_MAGIC = b"WKRG"
DIST_MAGIC = b"WKRD"
FORMAT_VERSION = 1


class GraphError(Exception):
    """Base class for graph construction and persistence failures."""


class GraphBuildError(GraphError):
    """Invalid inputs to graph construction (bad edge, bad titles, empty graph)."""


class FormatError(GraphError):
    """Base class for binary cache-format failures."""


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class ChecksumMismatchError(FormatError):
    pass


class CacheStoreError(GraphError):
    """Distance-cache store I/O failure, annotated with the target id."""


def normalize_title(raw: str) -> str:
    """Canonical title form: underscores to spaces, trimmed, internal
    whitespace runs collapsed. Case is preserved (titles are case-significant).
    """
    return " ".join(raw.replace("_", " ").split())


@dataclass
class PageGraph:
    """Directed graph in canonical CSR form with a node<->title mapping.

    Canonical form: within each row neighbor ids are strictly increasing,
    no self-loops, no parallel edges. Instances are immutable after
    construction and safe for concurrent reads.
    """

    num_nodes: int
    row_ptr: np.ndarray    # uint64, length num_nodes + 1
    col_indices: np.ndarray  # uint32, length nnz
    titles: list[str]
    title_index: dict[str, PageId]

    # lazy scipy matrices; benign to recompute under a race
    _fwd: csr_matrix | None = field(default=None, repr=False, compare=False)
    _rev: csr_matrix | None = field(default=None, repr=False, compare=False)

    @property
    def nnz(self) -> int:
        return int(self.row_ptr[-1])

    def forward_matrix(self) -> csr_matrix:
        if self._fwd is None:
            data = np.ones(self.nnz, dtype=np.uint8)
            self._fwd = csr_matrix(
                (data, self.col_indices, self.row_ptr.astype(np.int64)),
                shape=(self.num_nodes, self.num_nodes),
            )
        return self._fwd

    def reverse_matrix(self) -> csr_matrix:
        if self._rev is None:
            self._rev = self.forward_matrix().transpose().tocsr()
        return self._rev

    def out_degree(self, i: PageId) -> int:
        return int(self.row_ptr[i + 1] - self.row_ptr[i])

    def resolve_title(self, raw: str) -> PageId | None:
        return self.title_index.get(normalize_title(raw))


@dataclass
class DistanceField:
    """Shortest hop counts from every node TO one target, along edge direction."""

    target: PageId
    dist: np.ndarray  # uint32, length num_nodes


@dataclass
class SccResult:
    component_ids: np.ndarray          # component label per node
    largest_component: set[PageId]     # node ids (original) of the retained SCC
    remap: dict[PageId, PageId]        # original id -> dense id in the induced subgraph


def build_csr(
    edges: Iterable[tuple[int, int]] | np.ndarray,
    num_nodes: int,
    titles: Sequence[str],
) -> PageGraph:
    """Build a canonical CSR graph from an edge sequence.

    Sorts and deduplicates each row and removes self-loops. Titles are
    normalized and must be unique afterwards.
    """
    if len(titles) != num_nodes:
        raise GraphBuildError(
            f"titles length {len(titles)} != num_nodes {num_nodes}"
        )
    norm_titles = [normalize_title(t) for t in titles]
    title_index: dict[str, PageId] = {}
    for i, t in enumerate(norm_titles):
        if t in title_index:
            raise GraphBuildError(
                f"duplicate title after normalization: {t!r} "
                f"(nodes {title_index[t]} and {i})"
            )
        title_index[t] = i

    arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges,
                     dtype=np.int64)
    if arr.size == 0:
        arr = arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise GraphBuildError("edges must be a sequence of (src, dst) pairs")

    if arr.size:
        bad = (arr < 0) | (arr >= num_nodes)
        if bad.any():
            r = int(np.flatnonzero(bad.any(axis=1))[0])
            u, v = int(arr[r, 0]), int(arr[r, 1])
            raise GraphBuildError(
                f"edge ({u}, {v}) endpoint out of range [0, {num_nodes})"
            )
        arr = arr[arr[:, 0] != arr[:, 1]]  # self-loops never help the game

    if arr.size:
        # dedup + row-sort in one pass via a combined 64-bit key
        keys = arr[:, 0] * np.int64(num_nodes) + arr[:, 1]
        keys = np.unique(keys)
        src = keys // num_nodes
        dst = keys % num_nodes
    else:
        src = np.empty(0, dtype=np.int64)
        dst = np.empty(0, dtype=np.int64)

    counts = np.bincount(src, minlength=num_nodes)
    row_ptr = np.zeros(num_nodes + 1, dtype=np.uint64)
    np.cumsum(counts, out=row_ptr[1:])
    return PageGraph(
        num_nodes=num_nodes,
        row_ptr=row_ptr,
        col_indices=dst.astype(np.uint32),
        titles=norm_titles,
        title_index=title_index,
    )


def out_neighbors(g: PageGraph, i: PageId) -> np.ndarray:
    """Out-neighbor ids of node i, ascending. Constant-time slice bounds."""
    if not 0 <= i < g.num_nodes:
        raise IndexError(f"node {i} out of range [0, {g.num_nodes})")
    return g.col_indices[int(g.row_ptr[i]):int(g.row_ptr[i + 1])]


def has_edge(g: PageGraph, u: PageId, v: PageId) -> bool:
    """True iff the directed edge u->v exists (binary search in u's row)."""
    row = out_neighbors(g, u)
    pos = int(np.searchsorted(row, v))
    return pos < len(row) and int(row[pos]) == v


def _tarjan_component_ids(g: PageGraph) -> tuple[np.ndarray, int]:
    """Iterative Tarjan SCC. Explicit work stack: recursion would overflow
    on corpus-scale graphs.
    """
    n = g.num_nodes
    row_ptr = g.row_ptr.astype(np.int64)
    col = g.col_indices
    index = np.full(n, -1, dtype=np.int64)
    lowlink = np.zeros(n, dtype=np.int64)
    on_stack = np.zeros(n, dtype=bool)
    comp_id = np.full(n, -1, dtype=np.int64)
    counter = 0
    ncomp = 0
    stack: list[int] = []

    for root in range(n):
        if index[root] != -1:
            continue
        work = [(root, int(row_ptr[root]))]
        index[root] = lowlink[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        while work:
            v, ei = work[-1]
            if ei < row_ptr[v + 1]:
                work[-1] = (v, ei + 1)
                w = int(col[ei])
                if index[w] == -1:
                    index[w] = lowlink[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack[w] = True
                    work.append((w, int(row_ptr[w])))
                elif on_stack[w] and index[w] < lowlink[v]:
                    lowlink[v] = index[w]
            else:
                work.pop()
                if work:
                    u = work[-1][0]
                    if lowlink[v] < lowlink[u]:
                        lowlink[u] = lowlink[v]
                if lowlink[v] == index[v]:
                    while True:
                        w = stack.pop()
                        on_stack[w] = False
                        comp_id[w] = ncomp
                        if w == v:
                            break
                    ncomp += 1
    return comp_id, ncomp


def largest_scc(g: PageGraph) -> tuple[PageGraph, SccResult]:
    """Induced subgraph on the largest strongly connected component,
    with dense remapped ids (ascending original-id order).
    """
    if g.num_nodes == 0:
        raise GraphBuildError("empty graph has no strongly connected component")
    comp_id, ncomp = _tarjan_component_ids(g)
    sizes = np.bincount(comp_id, minlength=ncomp)
    keep = int(sizes.argmax())
    members = np.flatnonzero(comp_id == keep)

    new_id = np.full(g.num_nodes, -1, dtype=np.int64)
    new_id[members] = np.arange(len(members))

    srcs: list[np.ndarray] = []
    dsts: list[np.ndarray] = []
    for old in members:
        nbrs = out_neighbors(g, int(old))
        kept = nbrs[new_id[nbrs] >= 0]
        if kept.size:
            srcs.append(np.full(kept.size, new_id[old], dtype=np.int64))
            dsts.append(new_id[kept])
    if srcs:
        edges = np.stack(
            [np.concatenate(srcs), np.concatenate(dsts)], axis=1
        )
    else:
        edges = np.empty((0, 2), dtype=np.int64)

    sub = build_csr(edges, len(members), [g.titles[int(i)] for i in members])
    result = SccResult(
        component_ids=comp_id,
        largest_component=set(int(i) for i in members),
        remap={int(old): int(new_id[old]) for old in members},
    )
    return sub, result


def distances_to(g: PageGraph, target: PageId) -> DistanceField:
    """BFS hop counts from every node to ``target`` along edge direction
    (run over the reversed edge set).
    """
    if not 0 <= target < g.num_nodes:
        raise IndexError(f"target {target} out of range [0, {g.num_nodes})")
    raw = shortest_path(
        g.reverse_matrix(), directed=True, unweighted=True, indices=target
    )
    dist = np.full(g.num_nodes, UNREACHABLE, dtype=np.uint32)
    finite = np.isfinite(raw)
    dist[finite] = raw[finite].astype(np.uint32)
    return DistanceField(target=target, dist=dist)


def distances_from(g: PageGraph, source: PageId) -> np.ndarray:
    """BFS hop counts from ``source`` to every node (forward direction)."""
    if not 0 <= source < g.num_nodes:
        raise IndexError(f"source {source} out of range [0, {g.num_nodes})")
    raw = shortest_path(
        g.forward_matrix(), directed=True, unweighted=True, indices=source
    )
    dist = np.full(g.num_nodes, UNREACHABLE, dtype=np.uint32)
    finite = np.isfinite(raw)
    dist[finite] = raw[finite].astype(np.uint32)
    return dist


# --- binary persistence ------------------------------------------------------

def graph_to_bytes(g: PageGraph) -> bytes:
    """Serialize a graph to the binary cache format (deterministic bytes)."""
    parts = [
        GRAPH_MAGIC,
        struct.pack("<I", FORMAT_VERSION),
        struct.pack("<Q", g.num_nodes),
        struct.pack("<Q", g.nnz),
        g.row_ptr.astype("<u8").tobytes(),
        g.col_indices.astype("<u4").tobytes(),
        struct.pack("<I", len(g.titles)),
    ]
    for t in g.titles:
        b = t.encode("utf-8")
        parts.append(struct.pack("<I", len(b)))
        parts.append(b)
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def graph_checksum(g: PageGraph) -> str:
    """Snapshot checksum: CRC32 of the canonical serialized graph, as 8 hex digits."""
    return f"{zlib.crc32(graph_to_bytes(g)) & 0xFFFFFFFF:08x}"


class _Reader:
    """Cursor over a byte buffer that raises TruncatedFileError on underrun."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFileError(
                f"need {n} bytes at offset {self.pos}, file has {len(self.buf)}"
            )
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def _check_header(r: _Reader, magic: bytes, path: str) -> None:
    got = r.take(4)
    if got != magic:
        raise BadMagicError(f"{path}: bad magic {got!r}, expected {magic!r}")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"{path}: format version {version}, expected {FORMAT_VERSION}"
        )


def _check_crc(r: _Reader, path: str) -> None:
    body = r.buf[:r.pos]
    stored = r.u32()
    actual = zlib.crc32(body) & 0xFFFFFFFF
    if stored != actual:
        raise ChecksumMismatchError(
            f"{path}: checksum {stored:08x} does not match body {actual:08x}"
        )


def graph_from_bytes(buf: bytes, path: str = "<bytes>") -> PageGraph:
    r = _Reader(buf)
    _check_header(r, GRAPH_MAGIC, path)
    num_nodes = r.u64()
    nnz = r.u64()
    row_ptr = np.frombuffer(r.take(8 * (num_nodes + 1)), dtype="<u8").copy()
    col = np.frombuffer(r.take(4 * nnz), dtype="<u4").copy()
    count = r.u32()
    titles = []
    for _ in range(count):
        blen = r.u32()
        titles.append(r.take(blen).decode("utf-8"))
    _check_crc(r, path)
    return PageGraph(
        num_nodes=num_nodes,
        row_ptr=row_ptr,
        col_indices=col,
        titles=titles,
        title_index={t: i for i, t in enumerate(titles)},
    )


def save_graph(g: PageGraph, path: str | Path) -> None:
    data = graph_to_bytes(g)
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def load_graph(path: str | Path) -> PageGraph:
    with open(path, "rb") as f:
        return graph_from_bytes(f.read(), str(path))


def field_to_bytes(fld: DistanceField) -> bytes:
    body = b"".join([
        DIST_MAGIC,
        struct.pack("<I", FORMAT_VERSION),
        struct.pack("<I", fld.target),
        struct.pack("<Q", len(fld.dist)),
        fld.dist.astype("<u4").tobytes(),
    ])
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def field_from_bytes(buf: bytes, path: str = "<bytes>") -> DistanceField:
    r = _Reader(buf)
    _check_header(r, DIST_MAGIC, path)
    target = r.u32()
    n = r.u64()
    dist = np.frombuffer(r.take(4 * n), dtype="<u4").copy()
    _check_crc(r, path)
    return DistanceField(target=target, dist=dist)


class DistanceCache:
    """Per-target distance fields with an in-memory LRU over an optional
    per-target file store.

    File names are keyed by target id so caches can be reused incrementally
    across runs on the same snapshot. Writes are atomic per key.
    """

    def __init__(self, graph: PageGraph, root: str | Path | None = None,
                 lru_size: int = 64):
        self.graph = graph
        self.root = Path(root) if root is not None else None
        self.lru_size = lru_size
        self._mem: OrderedDict[int, DistanceField] = OrderedDict()
        self._lock = threading.RLock()
        self.computed = 0  # fields computed by BFS (not loads or hits)
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, target: PageId) -> Path:
        assert self.root is not None
        return self.root / f"dist_{target:08d}.wkrd"

    def get(self, target: PageId) -> DistanceField:
        with self._lock:
            if target in self._mem:
                self._mem.move_to_end(target)
                return self._mem[target]
            fld = None
            if self.root is not None:
                p = self._path(target)
                if p.exists():
                    try:
                        fld = field_from_bytes(p.read_bytes(), str(p))
                    except OSError as e:
                        raise CacheStoreError(f"target {target}: {e}") from e
                    if fld.target != target or len(fld.dist) != self.graph.num_nodes:
                        raise CacheStoreError(
                            f"target {target}: cache file {p} does not match graph"
                        )
            if fld is None:
                fld = distances_to(self.graph, target)
                self.computed += 1
                if self.root is not None:
                    try:
                        p = self._path(target)
                        tmp = p.with_suffix(".tmp")
                        tmp.write_bytes(field_to_bytes(fld))
                        os.replace(tmp, p)
                    except OSError as e:
                        raise CacheStoreError(f"target {target}: {e}") from e
            self._mem[target] = fld
            while len(self._mem) > self.lru_size:
                self._mem.popitem(last=False)
            return fld

    def warm(self, targets: Iterable[PageId]) -> None:
        for t in targets:
            self.get(t)
