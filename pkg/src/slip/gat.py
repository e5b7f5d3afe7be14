"""Modality-specific graph attention stacks and the fusion head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    LEAKY_SLOPE,
    Tensor,
    add,
    concat_cols,
    dropout,
    elu,
    l2_normalize_rows,
    leaky_relu,
    masked_row_softmax,
    matmul,
    transpose,
)


@dataclass
class GatLayerParams:
    """Per-head projection ``weights[k]`` (d_in×d_head) and attention vectors.

    The attention vector of head k is split into a source half ``att_src[k]``
    and a neighbour half ``att_dst[k]`` (each d_head×1), so that
    ``a·[Wh_i || Wh_j] = Wh_i·att_src + Wh_j·att_dst``.
    """

    weights: list[Tensor]
    att_src: list[Tensor]
    att_dst: list[Tensor]
    negative_slope: float = LEAKY_SLOPE
    dropout: float = 0.1

    def __post_init__(self):
        if not self.weights:
            raise ValueError("a GAT layer needs at least one head")
        if not (len(self.weights) == len(self.att_src) == len(self.att_dst)):
            raise ValueError("head parameter lists differ in length")

    @classmethod
    def init(
        cls, d_in: int, d_out: int, heads: int, rng: np.random.Generator, dropout: float = 0.1
    ) -> GatLayerParams:
        if heads < 1 or d_out % heads:
            raise ValueError(f"output width {d_out} is not divisible by {heads} heads")
        d_head = d_out // heads
        glorot = lambda a, b: rng.normal(0.0, np.sqrt(2.0 / (a + b)), size=(a, b))  # noqa: E731
        return cls(
            weights=[Tensor(glorot(d_in, d_head), requires_grad=True) for _ in range(heads)],
            att_src=[Tensor(glorot(d_head, 1), requires_grad=True) for _ in range(heads)],
            att_dst=[Tensor(glorot(d_head, 1), requires_grad=True) for _ in range(heads)],
            dropout=dropout,
        )

    @property
    def heads(self) -> int:
        return len(self.weights)

    @property
    def d_out(self) -> int:
        return sum(w.cols for w in self.weights)

    def tensors(self) -> list[Tensor]:
        return [*self.weights, *self.att_src, *self.att_dst]


def _check_adjacency(adjacency, b: int) -> np.ndarray:
    adj = np.asarray(adjacency, dtype=np.float64)
    if adj.shape != (b, b):
        raise ValueError(f"adjacency shape {adj.shape} does not match batch of {b}")
    if not np.array_equal(adj, adj.T):
        raise ValueError("adjacency must be symmetric")
    return adj


def _head(h: Tensor, neigh: np.ndarray, w: Tensor, a_src: Tensor, a_dst: Tensor, slope: float):
    wh = matmul(h, w)
    # e_ij = leaky_relu(a_src·Wh_i + a_dst·Wh_j), softmax over j in N(i) ∪ {i}
    scores = add(matmul(wh, a_src), transpose(matmul(wh, a_dst)))
    return wh, masked_row_softmax(leaky_relu(scores, slope), neigh)


def _neighbourhood(adjacency, b: int) -> np.ndarray:
    adj = _check_adjacency(adjacency, b)
    return (adj != 0) | np.eye(b, dtype=bool)


def attention_coefficients(h: Tensor, adjacency, params: GatLayerParams) -> list[Tensor]:
    """Per-head attention matrices (before dropout)."""
    neigh = _neighbourhood(adjacency, h.rows)
    return [
        _head(h, neigh, w, s, d, params.negative_slope)[1]
        for w, s, d in zip(params.weights, params.att_src, params.att_dst)
    ]


def gat_forward(
    h: Tensor,
    adjacency,
    params: GatLayerParams,
    rng: np.random.Generator | None = None,
    train: bool = False,
) -> Tensor:
    """One multi-head attention layer; head outputs are concatenated.

    Self-loops are added so isolated nodes attend to themselves only.
    """
    neigh = _neighbourhood(adjacency, h.rows)
    heads = []
    for w, a_src, a_dst in zip(params.weights, params.att_src, params.att_dst):
        wh, alpha = _head(h, neigh, w, a_src, a_dst, params.negative_slope)
        alpha = dropout(alpha, params.dropout, rng, train)
        heads.append(matmul(alpha, wh))
    return heads[0] if len(heads) == 1 else concat_cols(heads)


@dataclass
class FusionParams:
    """Projection of concatenated modality embeddings to the shared space."""

    weight: Tensor
    bias: Tensor
    activation: str = "elu"
    normalize: bool = True

    @classmethod
    def init(cls, d_in: int, d_out: int, rng: np.random.Generator, activation: str = "elu") -> FusionParams:
        w = rng.normal(0.0, np.sqrt(2.0 / (d_in + d_out)), size=(d_in, d_out))
        return cls(Tensor(w, requires_grad=True), Tensor(np.zeros((1, d_out)), requires_grad=True), activation)

    def tensors(self) -> list[Tensor]:
        return [self.weight, self.bias]


_ACTIVATIONS = {
    "elu": elu,
    "leaky_relu": leaky_relu,
    "identity": lambda x: x,
}


def fuse(h_v: Tensor, h_t: Tensor, params: FusionParams, eps: float = 1e-12) -> Tensor:
    if h_v.rows != h_t.rows:
        raise ValueError(f"batch sizes differ: {h_v.rows} vs {h_t.rows}")
    cat = concat_cols([h_v, h_t])
    if cat.cols != params.weight.rows:
        raise ValueError(f"fusion expects width {params.weight.rows}, got {cat.cols}")
    z = _ACTIVATIONS[params.activation](add(matmul(cat, params.weight), params.bias))
    return l2_normalize_rows(z, eps) if params.normalize else z


@dataclass
class StructuralParams:
    """Two GAT layers per modality plus the fusion head."""

    image_layers: list[GatLayerParams]
    text_layers: list[GatLayerParams]
    fusion: FusionParams

    @classmethod
    def init(
        cls,
        d: int,
        rng: np.random.Generator,
        hidden: int = 64,
        heads: int = 4,
        dropout: float = 0.1,
        fusion_activation: str = "elu",
    ) -> StructuralParams:
        def stack():
            return [
                GatLayerParams.init(d, hidden, heads, rng, dropout),
                GatLayerParams.init(hidden, d, heads, rng, dropout),
            ]

        return cls(stack(), stack(), FusionParams.init(2 * d, d, rng, fusion_activation))

    def named_tensors(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for mod, layers in (("image", self.image_layers), ("text", self.text_layers)):
            for li, layer in enumerate(layers):
                for k in range(layer.heads):
                    out[f"gat_{mod}_{li}_h{k}_w"] = layer.weights[k]
                    out[f"gat_{mod}_{li}_h{k}_asrc"] = layer.att_src[k]
                    out[f"gat_{mod}_{li}_h{k}_adst"] = layer.att_dst[k]
        out["fusion_w"] = self.fusion.weight
        out["fusion_b"] = self.fusion.bias
        return out

    def tensors(self) -> list[Tensor]:
        return list(self.named_tensors().values())


def _stack(h: Tensor, adjacency, layers: list[GatLayerParams], rng, train: bool) -> Tensor:
    for i, layer in enumerate(layers):
        h = gat_forward(h, adjacency, layer, rng, train)
        if i < len(layers) - 1:
            h = elu(h)
    return h


def forward_structural(
    e_v: Tensor,
    e_t: Tensor,
    adjacency,
    params: StructuralParams,
    rng: np.random.Generator | None = None,
    train: bool = False,
) -> Tensor:
    """Node embeddings Z from both modality embeddings and the batch graph."""
    h_v = _stack(e_v, adjacency, params.image_layers, rng, train)
    h_t = _stack(e_t, adjacency, params.text_layers, rng, train)
    return fuse(h_v, h_t, params.fusion)
