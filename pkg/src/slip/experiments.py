"""Multi-run experiments shared by the scripts and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .data import LabeledDataset
from .losses import alignment_score
from .metrics import hop_similarity_analysis, mean_mrr
from .trainer import embed_nodes, evaluate, initial_model, train


@dataclass
class PairedComparison:
    """Test mean MRR with and without graph supervision, one entry per seed."""

    seeds: list[int]
    without_graph: list[float]
    with_graph: list[float]

    @property
    def differences(self) -> np.ndarray:
        return np.asarray(self.with_graph) - np.asarray(self.without_graph)

    @property
    def mean_gain(self) -> float:
        return float(self.differences.mean())

    def rows(self) -> str:
        lines = ["seed\tmrr_wo_g\tmrr_w_g\tgain"]
        for s, a, b in zip(self.seeds, self.without_graph, self.with_graph):
            lines.append(f"{s}\t{a:.6f}\t{b:.6f}\t{b - a:+.6f}")
        a, b = np.mean(self.without_graph), np.mean(self.with_graph)
        lines.append(f"mean\t{a:.6f}\t{b:.6f}\t{b - a:+.6f}")
        return "\n".join(lines) + "\n"


def held_out_mrr(ds: LabeledDataset, config: TrainConfig) -> float:
    result = train(ds, config)
    return mean_mrr(evaluate(result.use_best(), ds, result.split.test))


def compare_graph_supervision(ds: LabeledDataset, config: TrainConfig, seeds) -> PairedComparison:
    """Train each seed twice, toggling only the graph loss and its structural path."""
    seeds = list(seeds)
    without = [held_out_mrr(ds, config.replace(seed=s, graph_loss=False)) for s in seeds]
    with_g = [held_out_mrr(ds, config.replace(seed=s, graph_loss=True)) for s in seeds]
    return PairedComparison(seeds, without, with_g)


def hop_means(ds: LabeledDataset, model, max_hop: int = 3, sample_budget: int | None = 20000) -> list[float]:
    nodes = np.arange(ds.n)
    table = hop_similarity_analysis(
        *embed_nodes(model, ds, nodes), ds.graph, max_hop, sample_budget, np.random.default_rng(0), nodes
    )
    return [table.groups[h].mean for h in range(max_hop + 1)]


def hop_shift(ds: LabeledDataset, config: TrainConfig, max_hop: int = 3) -> tuple[list[float], list[float]]:
    """Mean cross-modal cosine per hop group at initialisation and after training."""
    before = hop_means(ds, initial_model(ds, config), max_hop)
    after = hop_means(ds, train(ds, config).use_best(), max_hop)
    return before, after


def alignment_gain(ds: LabeledDataset, config: TrainConfig) -> tuple[float, float, int]:
    """Alignment score on the test split before and after a run, plus the steps taken."""
    result = train(ds, config)
    nodes = result.split.test
    before = alignment_score(*embed_nodes(initial_model(ds, config), ds, nodes))
    after = alignment_score(*embed_nodes(result.model, ds, nodes))
    return before, after, result.steps
