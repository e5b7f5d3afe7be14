"""Contrastive, structural and auxiliary objectives."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import (
    Tensor,
    add,
    clamp_max,
    exp,
    masked_sum,
    matmul,
    mul,
    row_log_softmax,
    scale,
    transpose,
)
from .graph import HopMasks

MAX_LOGIT_SCALE = 100.0


@dataclass
class LossWeights:
    lambda_graph: float = 0.05
    lambda_aux: float = 0.1
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.lambda_graph < 0 or self.lambda_aux < 0 or self.epsilon < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class Temperature:
    """Learnable log-scale ``t``; logits are multiplied by ``exp(t)``, capped at 100."""

    t: Tensor = field(default_factory=lambda: Tensor(math.log(1 / 0.07), requires_grad=True))

    @classmethod
    def from_scale(cls, s: float, trainable: bool = True) -> Temperature:
        return cls(Tensor(math.log(s), requires_grad=trainable))

    def scale(self) -> Tensor:
        return exp(clamp_max(self.t, math.log(MAX_LOGIT_SCALE)))

    def clamp_(self) -> None:
        np.minimum(self.t.data, math.log(MAX_LOGIT_SCALE), out=self.t.data)


def _diag_ce(logits: Tensor) -> Tensor:
    b = logits.rows
    return scale(masked_sum(row_log_softmax(logits), np.eye(b)), -1.0 / b)


def clip_logits(e_v: Tensor, e_t: Tensor, temp: Temperature) -> Tensor:
    return mul(matmul(e_v, transpose(e_t)), temp.scale())


def clip_infonce(e_v: Tensor, e_t: Tensor, temp: Temperature) -> Tensor:
    """Symmetric cross-entropy over ``scale * E_v E_t^T`` with diagonal targets."""
    if e_v.rows == 0:
        raise ValueError("empty batch")
    if e_v.shape != e_t.shape:
        raise ValueError(f"embedding shapes differ: {e_v.shape} vs {e_t.shape}")
    y_v = clip_logits(e_v, e_t, temp)
    return scale(add(_diag_ce(y_v), _diag_ce(transpose(y_v))), 0.5)


def structural_loss(
    z: Tensor,
    masks: HopMasks,
    temp: Temperature,
    weights: LossWeights | None = None,
    exclude_self: bool = False,
) -> Tensor:
    """Multi-positive InfoNCE on ``scale * Z Z^T``, averaged over positive entries.

    The softmax denominator runs over the whole row including the anchor
    itself; ``exclude_self`` drops the diagonal from it instead.
    """
    weights = weights or LossWeights()
    m_pos = np.asarray(masks.m_pos, dtype=np.float64)
    if m_pos.shape != (z.rows, z.rows):
        raise ValueError(f"mask shape {m_pos.shape} does not match batch of {z.rows}")
    s = mul(matmul(z, transpose(z)), temp.scale())
    if exclude_self:
        # a large finite offset keeps every value finite while zeroing exp(S_ii)
        s = add(s, Tensor(np.eye(z.rows) * -1e9))
    log_p = row_log_softmax(s)
    denom = m_pos.sum() + weights.epsilon
    return scale(masked_sum(log_p, m_pos), -1.0 / denom)


def aux_classification_loss(logits: Tensor, labels: Sequence[int]) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c})")
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    return scale(masked_sum(row_log_softmax(logits), onehot), -1.0 / n)


@dataclass
class Classifier:
    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, d_in: int, n_classes: int, rng: np.random.Generator) -> Classifier:
        w = rng.normal(0.0, 1.0 / math.sqrt(d_in), size=(d_in, n_classes))
        return cls(Tensor(w, requires_grad=True), Tensor(np.zeros((1, n_classes)), requires_grad=True))

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.weight), self.bias)

    def tensors(self) -> list[Tensor]:
        return [self.weight, self.bias]


@dataclass
class LossParts:
    clip: Tensor
    graph: Tensor | None = None
    aux: Tensor | None = None
    total: Tensor | None = None

    def values(self) -> tuple[float, float, float, float]:
        val = lambda t: 0.0 if t is None else t.item()  # noqa: E731
        return val(self.total), val(self.clip), val(self.graph), val(self.aux)


def total_loss(parts: LossParts, weights: LossWeights) -> Tensor:
    """``clip + lambda_graph * graph + lambda_aux * aux``; zero-weight or absent terms are skipped."""
    out = parts.clip
    if weights.lambda_graph and parts.graph is not None:
        out = add(out, scale(parts.graph, weights.lambda_graph))
    if weights.lambda_aux and parts.aux is not None:
        out = add(out, scale(parts.aux, weights.lambda_aux))
    parts.total = out
    return out


def alignment_score(e_v, e_t) -> float:
    """Mean cosine similarity of matched rows (rows assumed unit norm)."""
    a = Tensor.wrap(e_v).data
    b = Tensor.wrap(e_t).data
    if a.shape[0] == 0:
        raise ValueError("empty batch")
    if a.shape != b.shape:
        raise ValueError(f"embedding shapes differ: {a.shape} vs {b.shape}")
    return float((a * b).sum(axis=1).mean())
