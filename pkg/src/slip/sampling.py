"""Train/val/test splits and sub-graph mini-batch sampling."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .graph import HopMasks, InstanceGraph, build_masks, hop_distance_matrix


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.6
    val: float = 0.1
    test: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if min(self.train, self.val, self.test) < 0 or abs(self.train + self.val + self.test - 1) > 1e-9:
            raise ValueError("split fractions must be non-negative and sum to 1")


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def split_nodes(n: int, spec: SplitSpec) -> Split:
    """Random disjoint partition of ``range(n)``; each part is sorted."""
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_train = int(round(spec.train * n))
    n_val = int(round(spec.val * n))
    n_val = min(n_val, n - n_train)
    return Split(
        train=np.sort(perm[:n_train]),
        val=np.sort(perm[n_train : n_train + n_val]),
        test=np.sort(perm[n_train + n_val :]),
    )


@dataclass
class BatchSample:
    node_ids: np.ndarray
    adjacency: np.ndarray
    masks: HopMasks


def _bfs_expand(graph: InstanceGraph, b: int, rng: np.random.Generator) -> list[int]:
    picked: list[int] = []
    taken = np.zeros(graph.n, dtype=bool)
    while len(picked) < b:
        # fresh seed whenever the current component is exhausted
        seed = int(rng.choice(np.flatnonzero(~taken)))
        taken[seed] = True
        picked.append(seed)
        queue = deque([seed])
        while queue and len(picked) < b:
            u = queue.popleft()
            nbrs = graph.neighbors(u)
            for v in rng.permutation(nbrs):
                if not taken[v]:
                    taken[v] = True
                    picked.append(int(v))
                    queue.append(int(v))
                    if len(picked) == b:
                        break
    return picked


def sample_subgraph_batch(
    graph: InstanceGraph,
    b: int,
    strategy: str,
    rng: np.random.Generator,
    h: int = 1,
) -> BatchSample:
    """Draw ``b`` distinct nodes and build their induced adjacency and hop masks."""
    if b > graph.n:
        raise ValueError(f"batch of {b} exceeds the {graph.n} available nodes")
    if b < 1:
        raise ValueError("batch size must be >= 1")
    if strategy == "uniform":
        nodes = rng.choice(graph.n, size=b, replace=False)
    elif strategy == "bfs-expand":
        nodes = np.asarray(_bfs_expand(graph, b, rng))
    else:
        raise ValueError(f"unknown sampling strategy {strategy!r}")
    nodes = np.asarray(nodes, dtype=np.int64)
    dist = hop_distance_matrix(graph, nodes, max_hop=h)
    return BatchSample(nodes, graph.dense_adjacency(nodes), build_masks(dist, h))
