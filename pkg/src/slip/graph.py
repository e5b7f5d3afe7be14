"""Item-item co-purchase graphs, k-core filtering and hop-threshold masks."""

from __future__ import annotations

import itertools
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components


class FormatError(ValueError):
    """A malformed input line; carries the path and 1-based line number."""

    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = path
        self.lineno = lineno


@dataclass(frozen=True)
class PurchaseRecord:
    user_id: str
    item_id: str
    timestamp: int | None = None

    def __post_init__(self):
        if not self.user_id or not self.item_id:
            raise ValueError("purchase records need non-empty user and item ids")
        if self.timestamp is not None and self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp}")


@dataclass(frozen=True)
class BipartiteLog:
    records: tuple[PurchaseRecord, ...] = ()

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple]) -> BipartiteLog:
        return cls(tuple(PurchaseRecord(*p) for p in pairs))


class InstanceGraph:
    """Undirected weighted item graph with dense node indices ``0..n-1``.

    ``adjacency`` is a symmetric CSR matrix of positive integer weights with an
    empty diagonal. Instances are treated as immutable.
    """

    def __init__(self, node_ids: Sequence[str], adjacency: sparse.spmatrix | None = None):
        self.node_ids: tuple[str, ...] = tuple(node_ids)
        n = len(self.node_ids)
        if adjacency is None:
            adjacency = sparse.csr_matrix((n, n), dtype=np.int64)
        adj = sparse.csr_matrix(adjacency, dtype=np.int64)
        adj.eliminate_zeros()
        adj.sort_indices()
        if adj.shape != (n, n):
            raise ValueError(f"adjacency shape {adj.shape} does not match {n} nodes")
        if adj.diagonal().any():
            raise ValueError("self-loops are not allowed")
        if (adj != adj.T).nnz:
            raise ValueError("adjacency must be symmetric")
        if adj.nnz and adj.data.min() < 1:
            raise ValueError("edge weights must be >= 1")
        self.adjacency = adj
        self._index = {item: i for i, item in enumerate(self.node_ids)}

    @classmethod
    def from_edges(cls, node_ids: Sequence[str], edges: Iterable[tuple[int, int, int]]) -> InstanceGraph:
        n = len(node_ids)
        rows, cols, vals = [], [], []
        for i, j, w in edges:
            if i == j:
                raise ValueError(f"self-loop on node {i}")
            rows += [i, j]
            cols += [j, i]
            vals += [w, w]
        adj = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n), dtype=np.int64).tocsr()
        if adj.nnz and adj.data.max() > max(vals, default=0):
            raise ValueError("duplicate edges in edge list")
        return cls(node_ids, adj)

    @property
    def n(self) -> int:
        return len(self.node_ids)

    @property
    def num_edges(self) -> int:
        return self.adjacency.nnz // 2

    def index_of(self, item_id: str) -> int:
        return self._index[item_id]

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i] : a.indptr[i + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)

    def edges(self) -> list[tuple[int, int, int]]:
        """Each undirected edge once, as (i, j, weight) with i < j."""
        upper = sparse.triu(self.adjacency, k=1).tocoo()
        order = np.lexsort((upper.col, upper.row))
        return [(int(upper.row[k]), int(upper.col[k]), int(upper.data[k])) for k in order]

    def subgraph(self, nodes: Sequence[int]) -> InstanceGraph:
        """Induced subgraph; node order follows ``nodes``."""
        idx = np.asarray(nodes, dtype=np.int64)
        sub = self.adjacency[idx][:, idx]
        return InstanceGraph([self.node_ids[i] for i in idx], sub)

    def dense_adjacency(self, nodes: Sequence[int] | None = None) -> np.ndarray:
        """Binary adjacency (optionally induced on ``nodes``) as a float array."""
        adj = self.adjacency if nodes is None else self.adjacency[np.asarray(nodes)][:, np.asarray(nodes)]
        return (adj.toarray() > 0).astype(np.float64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, InstanceGraph):
            return NotImplemented
        return self.node_ids == other.node_ids and (self.adjacency != other.adjacency).nnz == 0

    def __repr__(self) -> str:
        return f"InstanceGraph(n={self.n}, edges={self.num_edges})"


def project_bipartite(log: BipartiteLog, min_cofreq: int = 3) -> InstanceGraph:
    """Connect items bought by at least ``min_cofreq`` distinct users.

    Edge weight is the number of distinct shared users. Repeat purchases by
    one user count once. Items left without edges are dropped.
    """
    if min_cofreq < 1:
        raise ValueError("min_cofreq must be >= 1")
    baskets: dict[str, set[str]] = defaultdict(set)
    for rec in log.records:
        baskets[rec.user_id].add(rec.item_id)

    counts: dict[tuple[str, str], int] = defaultdict(int)
    for items in baskets.values():
        for a, b in itertools.combinations(sorted(items), 2):
            counts[(a, b)] += 1

    kept = [(a, b, c) for (a, b), c in counts.items() if c >= min_cofreq]
    node_ids = sorted({x for a, b, _ in kept for x in (a, b)})
    index = {item: i for i, item in enumerate(node_ids)}
    return InstanceGraph.from_edges(node_ids, [(index[a], index[b], c) for a, b, c in kept])


def k_core(graph: InstanceGraph, k: int) -> InstanceGraph:
    """Maximal subgraph in which every node has degree >= k (peeling)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    deg = graph.degrees().astype(np.int64)
    alive = np.ones(graph.n, dtype=bool)
    queue = deque(int(i) for i in np.flatnonzero(deg < k))
    alive[deg < k] = False
    while queue:
        u = queue.popleft()
        for v in graph.neighbors(u):
            if alive[v]:
                deg[v] -= 1
                if deg[v] < k:
                    alive[v] = False
                    queue.append(int(v))
    return graph.subgraph(np.flatnonzero(alive))


def hop_distance_matrix(graph: InstanceGraph, nodes: Sequence[int], max_hop: int) -> np.ndarray:
    """BFS hop counts inside the subgraph induced by ``nodes``.

    Pairs farther than ``max_hop`` (or disconnected) saturate at ``max_hop + 1``.
    """
    nodes = list(nodes)
    if max_hop < 1:
        raise ValueError("max_hop must be >= 1")
    if len(set(nodes)) != len(nodes):
        raise ValueError("nodes must be distinct")
    for v in nodes:
        if not 0 <= v < graph.n:
            raise IndexError(f"node index {v} outside [0, {graph.n})")
    b = len(nodes)
    idx = np.asarray(nodes, dtype=np.int64)
    sub = sparse.csr_matrix((graph.adjacency[idx][:, idx] > 0).astype(np.int64))
    out = np.full((b, b), max_hop + 1, dtype=np.int64)
    np.fill_diagonal(out, 0)
    # level-synchronous BFS from every source at once
    reached = sparse.identity(b, dtype=np.int64, format="csr")
    frontier = reached
    for hop in range(1, max_hop + 1):
        step = (frontier @ sub).astype(bool).astype(np.int64)
        frontier = sparse.csr_matrix(step - step.multiply(reached))
        frontier.eliminate_zeros()
        if frontier.nnz == 0:
            break
        r, c = frontier.nonzero()
        out[r, c] = hop
        reached = sparse.csr_matrix(reached + frontier)
    return out


@dataclass(frozen=True)
class HopMasks:
    h: int
    m_pos: np.ndarray
    m_neg: np.ndarray

    @property
    def num_positive(self) -> int:
        return int(self.m_pos.sum())


def build_masks(distances: np.ndarray, h: int = 1) -> HopMasks:
    """Positive mask = pairs with 0 < distance <= h; negative = the rest minus the diagonal."""
    d = np.asarray(distances)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError(f"distance matrix must be square, got {d.shape}")
    if h < 1:
        raise ValueError("h must be >= 1")
    pos = ((d > 0) & (d <= h)).astype(np.float64)
    np.fill_diagonal(pos, 0.0)
    neg = 1.0 - pos - np.eye(len(d))
    return HopMasks(h=h, m_pos=pos, m_neg=neg)


@dataclass
class GraphStats:
    nodes: int
    edges: int
    score_mean: float | None = None
    score_std: float | None = None
    label: str = field(default="", compare=False)

    HEADER = "nodes\tedges\tscore_mean\tscore_std"

    def row(self) -> str:
        fmt = lambda x: "NA" if x is None else f"{x:.6f}"  # noqa: E731
        return f"{self.nodes}\t{self.edges}\t{fmt(self.score_mean)}\t{fmt(self.score_std)}"


def graph_stats(
    graph: InstanceGraph, pair_scorer: Callable[[int], float | None] | None = None
) -> GraphStats:
    """Node/edge counts, plus mean and population std of ``pair_scorer`` over nodes.

    The scorer returns ``None`` for nodes without valid features; those are skipped.
    """
    stats = GraphStats(nodes=graph.n, edges=graph.num_edges)
    if pair_scorer is None:
        return stats
    scores = [s for s in (pair_scorer(i) for i in range(graph.n)) if s is not None]
    if scores:
        arr = np.asarray(scores, dtype=np.float64)
        stats.score_mean = float(arr.mean())
        stats.score_std = float(arr.std())
    return stats


def format_stats_table(rows: Iterable[GraphStats]) -> str:
    lines = [GraphStats.HEADER] + [r.row() for r in rows]
    return "\n".join(lines) + "\n"


# -- files ---------------------------------------------------------------------


def read_purchase_log(path: str | Path) -> BipartiteLog:
    """``user<TAB>item[<TAB>timestamp]`` per line; ``#`` lines and blanks are skipped."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise FormatError(path, lineno, f"expected 2 or 3 tab-separated fields, got {len(parts)}")
            ts = None
            if len(parts) == 3:
                try:
                    ts = int(parts[2])
                except ValueError:
                    raise FormatError(path, lineno, f"bad timestamp {parts[2]!r}") from None
            try:
                records.append(PurchaseRecord(parts[0], parts[1], ts))
            except ValueError as exc:
                raise FormatError(path, lineno, str(exc)) from None
    return BipartiteLog(tuple(records))


def write_edge_list(graph: InstanceGraph, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, j, w in graph.edges():
            fh.write(f"{graph.node_ids[i]}\t{graph.node_ids[j]}\t{w}\n")


def read_edge_list(path: str | Path) -> list[tuple[str, str, int]]:
    """Raw ``(item_i, item_j, weight)`` triples, validated line by line."""
    out = []
    seen: set[tuple[str, str]] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(path, lineno, f"expected 3 tab-separated fields, got {len(parts)}")
            a, b, w = parts
            if not a or not b:
                raise FormatError(path, lineno, "empty item id")
            if a == b:
                raise FormatError(path, lineno, f"self-loop on {a}")
            try:
                weight = int(w)
            except ValueError:
                raise FormatError(path, lineno, f"bad weight {w!r}") from None
            if weight < 1:
                raise FormatError(path, lineno, f"weight must be >= 1, got {weight}")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise FormatError(path, lineno, f"duplicate edge {a}-{b}")
            seen.add(key)
            out.append((a, b, weight))
    return out


def graph_from_edge_list(triples: Iterable[tuple[str, str, int]], node_ids: Sequence[str] | None = None) -> InstanceGraph:
    triples = list(triples)
    if node_ids is None:
        node_ids = sorted({x for a, b, _ in triples for x in (a, b)})
    index = {item: i for i, item in enumerate(node_ids)}
    return InstanceGraph.from_edges(node_ids, [(index[a], index[b], w) for a, b, w in triples])


def load_graph(path: str | Path) -> InstanceGraph:
    return graph_from_edge_list(read_edge_list(path))


def build_copurchase_graph(
    log: BipartiteLog, min_cofreq: int = 3, kcore: int = 5, order: str = "freq-first"
) -> InstanceGraph:
    """Projection plus the two filters, in either order.

    ``core-first`` runs the k-core on the unfiltered projection (every
    co-purchase counts as an edge) before applying the frequency threshold.
    """
    if order == "freq-first":
        return k_core(project_bipartite(log, min_cofreq), kcore)
    if order == "core-first":
        cored = k_core(project_bipartite(log, 1), kcore)
        kept = [(i, j, w) for i, j, w in cored.edges() if w >= min_cofreq]
        touched = sorted({x for i, j, _ in kept for x in (i, j)})
        remap = {old: new for new, old in enumerate(touched)}
        return InstanceGraph.from_edges(
            [cored.node_ids[i] for i in touched], [(remap[i], remap[j], w) for i, j, w in kept]
        )
    raise ValueError(f"unknown filter order {order!r}")


def is_connected(graph: InstanceGraph) -> bool:
    if graph.n == 0:
        return True
    n_comp, _ = connected_components(graph.adjacency, directed=False)
    return n_comp == 1
