"""Cross-modal retrieval metrics and hop-grouped similarity analysis."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Tensor
from .graph import InstanceGraph, hop_distance_matrix

RECALL_KS = (1, 5, 10)
HIST_BINS = 101


@dataclass
class RetrievalResult:
    direction: str
    mrr: float
    recall_at: dict[int, float]
    mean_rank: float
    median_rank: float
    ranks: np.ndarray = field(repr=False, default=None)

    def row(self) -> str:
        r = self.recall_at
        return (
            f"{self.direction}\t{self.mrr:.6f}\t{r[1]:.6f}\t{r[5]:.6f}\t{r[10]:.6f}"
            f"\t{self.mean_rank:.4f}\t{self.median_rank:g}"
        )


REPORT_HEADER = "direction\tmrr\tr@1\tr@5\tr@10\tmean_rank\tmedian_rank"


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def true_match_ranks(sims: np.ndarray) -> np.ndarray:
    """Rank of each row's diagonal entry, counting ties against it."""
    diag = np.diag(sims)[:, None]
    return (sims >= diag).sum(axis=1)


def summarize_ranks(direction: str, ranks: np.ndarray) -> RetrievalResult:
    ranks = np.asarray(ranks)
    ordered = np.sort(ranks)
    return RetrievalResult(
        direction=direction,
        # exactly rounded sums, so the result does not depend on summation order
        mrr=math.fsum(1.0 / ranks) / len(ranks),
        recall_at={k: float(np.mean(ranks <= k)) for k in RECALL_KS},
        mean_rank=math.fsum(ranks.tolist()) / len(ranks),
        median_rank=float(ordered[(len(ordered) - 1) // 2]),
        ranks=ranks,
    )


def retrieval_eval(e_v, e_t) -> tuple[RetrievalResult, RetrievalResult]:
    """Image-to-text and text-to-image retrieval of matched rows."""
    a, b = _as_array(e_v), _as_array(e_t)
    if a.shape[0] == 0:
        raise ValueError("no queries")
    if a.shape != b.shape:
        raise ValueError(f"embedding shapes differ: {a.shape} vs {b.shape}")
    sims = a @ b.T
    return (
        summarize_ranks("i2t", true_match_ranks(sims)),
        summarize_ranks("t2i", true_match_ranks(sims.T)),
    )


def mean_mrr(results: Sequence[RetrievalResult]) -> float:
    return float(np.mean([r.mrr for r in results]))


def average_results(results: Sequence[RetrievalResult], direction: str = "mean") -> RetrievalResult:
    return RetrievalResult(
        direction=direction,
        mrr=float(np.mean([r.mrr for r in results])),
        recall_at={k: float(np.mean([r.recall_at[k] for r in results])) for k in RECALL_KS},
        mean_rank=float(np.mean([r.mean_rank for r in results])),
        median_rank=float(np.mean([r.median_rank for r in results])),
    )


def format_report(results: Sequence[RetrievalResult], with_mean: bool = True) -> str:
    rows = list(results)
    if with_mean and len(rows) > 1:
        rows.append(average_results(rows))
    return "\n".join([REPORT_HEADER] + [r.row() for r in rows]) + "\n"


def dump_ranked_list(
    e_v, e_t, node_ids: Sequence[str], query: str | int, direction: str = "t2i", k: int = 10
) -> list[tuple[str, float, bool]]:
    """Top-``k`` candidates for one query, ties ordered with the true match last."""
    a, b = _as_array(e_v), _as_array(e_t)
    if isinstance(query, str):
        if query not in node_ids:
            raise KeyError(f"unknown query {query!r}")
        q = list(node_ids).index(query)
    else:
        q = int(query)
        if not 0 <= q < len(node_ids):
            raise KeyError(f"unknown query index {query}")
    if direction == "i2t":
        scores = b @ a[q]
    elif direction == "t2i":
        scores = a @ b[q]
    else:
        raise ValueError(f"direction must be i2t or t2i, got {direction!r}")
    is_match = np.arange(len(scores)) == q
    order = np.lexsort((np.arange(len(scores)), is_match, -scores))
    return [(node_ids[j], float(scores[j]), bool(is_match[j])) for j in order[:k]]


@dataclass
class HopGroup:
    hop: int
    similarities: np.ndarray
    pairs: np.ndarray  # (m, 2) ordered (image row, text row)

    @property
    def mean(self) -> float:
        return float(self.similarities.mean()) if self.similarities.size else float("nan")

    @property
    def std(self) -> float:
        return float(self.similarities.std()) if self.similarities.size else float("nan")

    def histogram(self) -> tuple[np.ndarray, np.ndarray]:
        return np.histogram(np.clip(self.similarities, -1.0, 1.0), bins=HIST_BINS, range=(-1.0, 1.0))


@dataclass
class HopSimilarityTable:
    groups: dict[int, HopGroup]

    def summary_rows(self) -> str:
        lines = ["hop\tcount\tmean\tstd"]
        for g in sorted(self.groups):
            grp = self.groups[g]
            lines.append(f"{g}\t{grp.similarities.size}\t{grp.mean:.6f}\t{grp.std:.6f}")
        return "\n".join(lines) + "\n"


def hop_similarity_analysis(
    e_v,
    e_t,
    graph: InstanceGraph,
    max_hop: int = 3,
    sample_budget: int | None = 20000,
    rng: np.random.Generator | None = None,
    nodes: Sequence[int] | None = None,
) -> HopSimilarityTable:
    """Cross-modal cosines ``cos(e_v^i, e_t^j)`` grouped by hop distance of (i, j).

    Row ``r`` of the embeddings belongs to graph node ``nodes[r]`` (all nodes by
    default). Groups at hop >= 2 are subsampled to ``sample_budget`` ordered pairs.
    """
    a, b = _as_array(e_v), _as_array(e_t)
    nodes = list(range(graph.n)) if nodes is None else list(nodes)
    if a.shape[0] != len(nodes) or b.shape[0] != len(nodes):
        raise ValueError("embeddings must have one row per analysed node")
    rng = rng or np.random.default_rng(0)
    dist = hop_distance_matrix(graph, nodes, max_hop)
    groups = {}
    for g in range(max_hop + 1):
        rows, cols = np.nonzero(dist == g)
        if g >= 2 and sample_budget is not None and len(rows) > sample_budget:
            pick = np.sort(rng.choice(len(rows), size=sample_budget, replace=False))
            rows, cols = rows[pick], cols[pick]
        sims = (a[rows] * b[cols]).sum(axis=1)
        groups[g] = HopGroup(g, sims, np.stack([rows, cols], axis=1))
    return HopSimilarityTable(groups)


def write_hop_analysis(table: HopSimilarityTable, directory: str | Path) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    for g, grp in sorted(table.groups.items()):
        path = d / f"hop{g}.tsv"
        path.write_text("".join(f"{x!r}\n" for x in grp.similarities.tolist()), encoding="utf-8")
        written.append(path)
    hist = d / "histograms.tsv"
    lines = ["hop\tbin_left\tbin_right\tcount"]
    for g, grp in sorted(table.groups.items()):
        counts, edges = grp.histogram()
        lines += [f"{g}\t{edges[i]:.4f}\t{edges[i + 1]:.4f}\t{counts[i]}" for i in range(len(counts))]
    hist.write_text("\n".join(lines) + "\n", encoding="utf-8")
    summary = d / "summary.tsv"
    summary.write_text(table.summary_rows(), encoding="utf-8")
    return written + [hist, summary]
