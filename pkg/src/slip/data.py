"""Datasets on disk and a planted-structure synthetic generator.

A dataset directory holds four files::

    edges.tsv    item_i<TAB>item_j<TAB>weight
    image.tsv    dim=<d> modality=image, then item<TAB>f1,...,fd
    text.tsv     dim=<d> modality=text,  then item<TAB>f1,...,fd
    labels.tsv   item<TAB>class_index          (optional)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .encoders import FeatureStore, read_features, write_features
from .graph import (
    FormatError,
    GraphStats,
    InstanceGraph,
    format_stats_table,
    graph_stats,
    read_edge_list,
    write_edge_list,
)
from .sampling import Split, SplitSpec, split_nodes

log = logging.getLogger(__name__)

EDGES, IMAGE, TEXT, LABELS = "edges.tsv", "image.tsv", "text.tsv", "labels.tsv"


@dataclass(frozen=True)
class SyntheticSpec:
    """Clustered items with per-cluster roles.

    Items in a cluster share a latent centroid; items of the same role also
    share a role offset. Within-cluster edges prefer pairs of different roles
    (``complement_pair_fraction`` is the expected share of such edges), so
    one hop tends to link complementary items and two hops similar ones.
    """

    n_items: int = 2000
    n_clusters: int = 40
    feature_dim: int = 32
    latent_dim: int = 16
    roles_per_cluster: int = 2
    intra_cluster_edge_prob: float = 0.12
    inter_cluster_edge_prob: float = 0.0005
    complement_pair_fraction: float = 0.8
    cluster_scale: float = 1.0
    role_scale: float = 0.7
    item_scale: float = 0.7
    feature_noise_sigma: float = 0.3
    seed: int = 0

    def __post_init__(self):
        probs = (self.intra_cluster_edge_prob, self.inter_cluster_edge_prob, self.complement_pair_fraction)
        if not all(0.0 <= p <= 1.0 for p in probs):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.intra_cluster_edge_prob <= self.inter_cluster_edge_prob:
            raise ValueError("intra-cluster edge probability must exceed the inter-cluster one")
        if not 1 <= self.n_clusters <= self.n_items:
            raise ValueError("need 1 <= n_clusters <= n_items")
        if self.latent_dim > self.feature_dim or self.latent_dim < 1:
            raise ValueError("latent_dim must lie in [1, feature_dim]")
        if self.roles_per_cluster < 1 or self.feature_noise_sigma < 0:
            raise ValueError("roles_per_cluster must be >= 1 and noise non-negative")


@dataclass
class LabeledDataset:
    graph: InstanceGraph
    image: FeatureStore
    text: FeatureStore
    labels: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for store in (self.image, self.text):
            missing = [k for k in self.graph.node_ids if k not in store]
            if missing:
                raise ValueError(f"{store.modality} features missing for {missing[0]!r}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.graph.n,):
                raise ValueError("one label per node required")
            if self.labels.size and self.labels.min() < 0:
                raise ValueError("labels must be non-negative")

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def n_classes(self) -> int:
        return 0 if self.labels is None or not self.labels.size else int(self.labels.max()) + 1

    def keys(self, idx: Sequence[int] | None = None) -> list[str]:
        ids = self.graph.node_ids
        return list(ids) if idx is None else [ids[i] for i in idx]

    def split(self, spec: SplitSpec) -> Split:
        return split_nodes(self.n, spec)


def _orthonormal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(rows, cols)))
    return q * np.sign(np.diag(r))


def generate_synthetic(spec: SyntheticSpec) -> LabeledDataset:
    rng = np.random.default_rng(spec.seed)
    n, c, L = spec.n_items, spec.n_clusters, spec.latent_dim

    cluster = np.sort(np.arange(n) % c)
    # roles cycle inside each cluster so every role is populated
    role = np.zeros(n, dtype=np.int64)
    for k in range(c):
        members = np.flatnonzero(cluster == k)
        role[members] = np.arange(len(members)) % spec.roles_per_cluster

    centroids = rng.normal(size=(c, L)) * spec.cluster_scale
    offsets = rng.normal(size=(c, spec.roles_per_cluster, L)) * spec.role_scale
    items = rng.normal(size=(n, L)) * spec.item_scale
    latent = centroids[cluster] + offsets[cluster, role] + items

    proj_img = _orthonormal(rng, spec.feature_dim, L)
    proj_txt = _orthonormal(rng, spec.feature_dim, L)
    sigma = spec.feature_noise_sigma
    img = latent @ proj_img.T + sigma * rng.normal(size=(n, spec.feature_dim))
    txt = latent @ proj_txt.T + sigma * rng.normal(size=(n, spec.feature_dim))

    same_cluster = cluster[:, None] == cluster[None, :]
    same_role = role[:, None] == role[None, :]
    prob = _edge_probabilities(spec, same_cluster, same_role)
    upper = np.triu(rng.random((n, n)) < prob, k=1)
    rows, cols = np.nonzero(upper)

    width = len(str(n - 1))
    node_ids = [f"item{i:0{width}d}" for i in range(n)]
    graph = InstanceGraph.from_edges(node_ids, [(int(i), int(j), 1) for i, j in zip(rows, cols)])
    meta = {
        "n_edges": int(len(rows)),
        "n_intra_edges": int(same_cluster[rows, cols].sum()),
        "n_cross_role_edges": int((same_cluster & ~same_role)[rows, cols].sum()),
        "roles": role,
        "latent": latent,
    }
    return LabeledDataset(
        graph,
        FeatureStore("image", spec.feature_dim, dict(zip(node_ids, img))),
        FeatureStore("text", spec.feature_dim, dict(zip(node_ids, txt))),
        cluster.astype(np.int64),
        meta,
    )


def _edge_probabilities(spec: SyntheticSpec, same_cluster: np.ndarray, same_role: np.ndarray) -> np.ndarray:
    p = spec.intra_cluster_edge_prob
    prob = np.where(same_cluster, p, spec.inter_cluster_edge_prob)
    if p >= 1.0:
        return prob
    intra = same_cluster & ~np.eye(len(same_cluster), dtype=bool)
    n_cross = (intra & ~same_role).sum()
    n_same = (intra & same_role).sum()
    if n_cross == 0 or n_same == 0:
        return prob
    # split the intra-cluster edge budget so that a `complement_pair_fraction`
    # share of it lands on cross-role pairs
    budget = p * (n_cross + n_same)
    f = spec.complement_pair_fraction
    p_cross = min(1.0, f * budget / n_cross)
    p_same = min(1.0, (1 - f) * budget / n_same)
    prob = np.where(intra & ~same_role, p_cross, prob)
    return np.where(intra & same_role, p_same, prob)


# -- files -------------------------------------------------------------------------


def write_dataset(ds: LabeledDataset, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_edge_list(ds.graph, d / EDGES)
    order = ds.keys()
    write_features(ds.image, d / IMAGE, order)
    write_features(ds.text, d / TEXT, order)
    if ds.labels is not None:
        with open(d / LABELS, "w", encoding="utf-8", newline="\n") as fh:
            for key, lab in zip(order, ds.labels):
                fh.write(f"{key}\t{int(lab)}\n")


def read_labels(path: str | Path) -> dict[str, int]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0]:
                raise FormatError(path, lineno, "expected item_id<TAB>class_index")
            try:
                lab = int(parts[1])
            except ValueError:
                raise FormatError(path, lineno, f"bad class index {parts[1]!r}") from None
            if lab < 0:
                raise FormatError(path, lineno, "class index must be non-negative")
            out[parts[0]] = lab
    return out


def load_dataset(
    edges: str | Path,
    image: str | Path,
    text: str | Path,
    labels: str | Path | None = None,
) -> LabeledDataset:
    """Read a dataset, keeping only items that have features in both modalities.

    Node order follows the image feature file. Edges touching a dropped or
    unknown item are dropped too; both counts are logged and kept in ``meta``.
    """
    img = read_features(image)
    txt = read_features(text)
    triples = read_edge_list(edges)
    lab = read_labels(labels) if labels is not None else None

    node_ids = [k for k in img.features if k in txt and (lab is None or k in lab)]
    keep = set(node_ids)
    mentioned = set(img.features) | set(txt.features) | {x for a, b, _ in triples for x in (a, b)}
    dropped_nodes = sorted(mentioned - keep)
    kept_edges = [(a, b, w) for a, b, w in triples if a in keep and b in keep]
    dropped_edges = len(triples) - len(kept_edges)
    if dropped_nodes or dropped_edges:
        log.warning("dropped %d items lacking a modality and %d dangling edges", len(dropped_nodes), dropped_edges)

    index = {k: i for i, k in enumerate(node_ids)}
    graph = InstanceGraph.from_edges(node_ids, [(index[a], index[b], w) for a, b, w in kept_edges])
    return LabeledDataset(
        graph,
        img.subset(node_ids),
        txt.subset(node_ids),
        None if lab is None else np.array([lab[k] for k in node_ids], dtype=np.int64),
        {"dropped_nodes": dropped_nodes, "dropped_edges": dropped_edges},
    )


def load_dataset_dir(directory: str | Path) -> LabeledDataset:
    d = Path(directory)
    labels = d / LABELS
    return load_dataset(d / EDGES, d / IMAGE, d / TEXT, labels if labels.exists() else None)


def feature_alignment_scorer(ds: LabeledDataset) -> Callable[[int], float | None]:
    """Stand-in pair scorer: cosine between an item's raw image and text vectors.

    Only meaningful when both modalities share a feature space; returns
    ``None`` for every node when the dimensions differ.
    """
    if ds.image.dim != ds.text.dim:
        return lambda i: None
    keys = ds.graph.node_ids

    def score(i: int) -> float | None:
        a = ds.image.features[keys[i]]
        b = ds.text.features[keys[i]]
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0 or nb == 0:
            return None
        return float(a @ b / (na * nb))

    return score


def emit_stats_table(
    datasets: Sequence[LabeledDataset],
    scorer_factory: Callable[[LabeledDataset], Callable[[int], float | None]] = feature_alignment_scorer,
) -> str:
    rows: list[GraphStats] = [graph_stats(ds.graph, scorer_factory(ds)) for ds in datasets]
    return format_stats_table(rows)
