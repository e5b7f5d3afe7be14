"""Adam, layer-wise learning rates, warmup/decay schedule and early stopping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Tensor


@dataclass
class ParamGroup:
    name: str
    tensors: list[Tensor]
    lr: float


def encoder_rate(depth: int, base_lr: float, layer_decay: float, dlr: bool) -> float:
    """Deepest layer (depth 0) trains at ``base_lr``; each shallower step divides by the decay."""
    return base_lr / layer_decay**depth if dlr else base_lr


def assign_learning_rates(
    encoder_groups: Sequence[tuple[str, int, list[Tensor]]],
    head_groups: Sequence[tuple[str, list[Tensor]]],
    base_lr: float,
    layer_decay: float,
    graph_lr: float,
    dlr: bool = True,
) -> list[ParamGroup]:
    groups = [
        ParamGroup(name, tensors, encoder_rate(depth, base_lr, layer_decay, dlr))
        for name, depth, tensors in encoder_groups
    ]
    groups += [ParamGroup(name, tensors, graph_lr) for name, tensors in head_groups]
    return groups


def lr_schedule(step: int, total_steps: int, warmup_steps: int) -> float:
    """Linear ramp 0 -> 1 over ``warmup_steps``, then linear 1 -> 0 at ``total_steps``."""
    if total_steps <= warmup_steps:
        raise ValueError("total_steps must exceed warmup_steps")
    if step <= 0:
        return 0.0
    if step < warmup_steps:
        return step / warmup_steps
    if step >= total_steps:
        return 0.0
    return (total_steps - step) / (total_steps - warmup_steps)


@dataclass
class EarlyStopping:
    """Stop after ``patience`` consecutive evaluations without beating best + min_delta."""

    patience: int = 10
    min_delta: float = 0.001
    best: float = -np.inf
    best_epoch: int = -1
    bad_epochs: int = 0
    epoch: int = 0

    def update(self, metric: float) -> str:
        self.epoch += 1
        if metric > self.best + self.min_delta:
            self.best = metric
            self.best_epoch = self.epoch
            self.bad_epochs = 0
            return "continue"
        self.bad_epochs += 1
        return "stop" if self.bad_epochs >= self.patience else "continue"

    @property
    def improved(self) -> bool:
        return self.best_epoch == self.epoch


@dataclass
class Adam:
    groups: list[ParamGroup]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    _m: dict[int, np.ndarray] = field(default_factory=dict, repr=False)
    _v: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    def zero_grad(self) -> None:
        for g in self.groups:
            for p in g.tensors:
                p.zero_grad()

    def step(self, multiplier: float = 1.0) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for group in self.groups:
            lr = group.lr * multiplier
            for p in group.tensors:
                if p.grad is None:
                    continue
                key = id(p)
                m = self._m.get(key)
                if m is None:
                    m = self._m[key] = np.zeros_like(p.data)
                    self._v[key] = np.zeros_like(p.data)
                v = self._v[key]
                m *= self.beta1
                m += (1 - self.beta1) * p.grad
                v *= self.beta2
                v += (1 - self.beta2) * p.grad**2
                p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
