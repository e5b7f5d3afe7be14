"""The training loop: sampling, objectives, scheduled Adam steps, early stopping."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import NonFiniteError
from .config import ConfigError, TrainConfig
from .data import LabeledDataset
from .losses import alignment_score
from .metrics import RetrievalResult, mean_mrr, retrieval_eval
from .model import SlipModel
from .optim import Adam, EarlyStopping, lr_schedule
from .sampling import Split, SplitSpec, sample_subgraph_batch

log = logging.getLogger(__name__)

LOG_HEADER = "step\tL_total\tL_clip\tL_graph\tL_aux\talignment\tlr"


class DivergenceError(FloatingPointError):
    def __init__(self, step: int, detail: str = ""):
        super().__init__(f"training diverged at step {step}" + (f": {detail}" if detail else ""))
        self.step = step


@dataclass
class TrainResult:
    model: SlipModel
    split: Split
    best_state: dict[str, np.ndarray]
    log_lines: list[str] = field(default_factory=list)
    val_history: list[float] = field(default_factory=list)
    initial_val: float = float("nan")
    best_val: float = float("nan")
    best_epoch: int = 0
    best_step: int = 0
    steps: int = 0
    epochs_run: int = 0

    def use_best(self) -> SlipModel:
        self.model.load_state(self.best_state)
        return self.model


def embed_nodes(model: SlipModel, ds: LabeledDataset, idx: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    e_v, e_t = model.embed(ds.image, ds.text, ds.keys(idx))
    return e_v.data, e_t.data


def evaluate(model: SlipModel, ds: LabeledDataset, idx: Sequence[int]) -> tuple[RetrievalResult, RetrievalResult]:
    return retrieval_eval(*embed_nodes(model, ds, idx))


def steps_per_epoch(config: TrainConfig, n_train: int) -> int:
    b = min(config.batch_size, n_train)
    return config.steps_per_epoch or max(1, math.ceil(n_train / b))


def _stream_rngs(seed: int) -> list[np.random.Generator]:
    # independent streams for initialisation, batch sampling and dropout
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


def initial_model(ds: LabeledDataset, config: TrainConfig) -> SlipModel:
    """The model ``train`` starts from for this config and seed."""
    return SlipModel(config, ds.image.dim, ds.text.dim, ds.n_classes, ds.keys(), _stream_rngs(config.seed)[0])


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def train(
    ds: LabeledDataset,
    config: TrainConfig,
    out_dir: str | Path | None = None,
    split: Split | None = None,
) -> TrainResult:
    """Train on the training split, early-stopping on validation mean MRR.

    Batches are sub-graphs of the training-split graph. Given the same
    config (seed included) the loss log and checkpoints are bit-identical.
    """
    split = split or ds.split(SplitSpec(config.split_train, config.split_val, config.split_test, config.seed))
    _, sample_rng, drop_rng = _stream_rngs(config.seed)
    model = initial_model(ds, config)
    train_graph = ds.graph.subgraph(split.train)
    n_train = train_graph.n
    if n_train == 0:
        raise ConfigError("empty training split")
    b = min(config.batch_size, n_train)
    per_epoch = steps_per_epoch(config, n_train)
    total_steps = config.epochs * per_epoch
    if total_steps and total_steps <= config.warmup_steps:
        raise ConfigError(
            f"total steps {total_steps} must exceed warmup_steps {config.warmup_steps}"
        )

    optimizer = Adam(model.param_groups(), config.adam_beta1, config.adam_beta2, config.adam_eps)
    stopper = EarlyStopping(config.patience, config.min_delta)
    result = TrainResult(model, split, model.state())
    has_val = len(split.val) > 0
    result.initial_val = mean_mrr(evaluate(model, ds, split.val)) if has_val else float("nan")
    log.info("initial val MRR %.4f, %d steps/epoch, %d total", result.initial_val, per_epoch, total_steps)

    step = 0
    for epoch in range(1, config.epochs + 1):
        for _ in range(per_epoch):
            step += 1
            batch = sample_subgraph_batch(train_graph, b, config.sampler, sample_rng, config.hop)
            global_idx = split.train[batch.node_ids]
            labels = ds.labels[global_idx] if ds.labels is not None else None
            # overflow surfaces as NonFiniteError; numpy's own warning is redundant
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    parts, e_v, e_t = model.batch_losses(
                        ds.image, ds.text, ds.keys(global_idx), batch.adjacency, batch.masks, labels, drop_rng, True
                    )
                    optimizer.zero_grad()
                    parts.total.backward()
            except NonFiniteError as exc:
                raise DivergenceError(step, str(exc)) from None
            values = parts.values()
            if not all(math.isfinite(v) for v in values):
                raise DivergenceError(step, "non-finite loss")
            mult = lr_schedule(step, total_steps, config.warmup_steps)
            optimizer.step(mult)
            model.clamp_()
            align = alignment_score(e_v, e_t)
            result.log_lines.append(
                "\t".join([str(step), *map(_fmt, values), _fmt(align), _fmt(config.base_lr * mult)])
            )

        result.epochs_run = epoch
        if not has_val:
            result.best_state = model.state()
            result.best_epoch, result.best_step = epoch, step
            continue
        val = mean_mrr(evaluate(model, ds, split.val))
        result.val_history.append(val)
        decision = stopper.update(val)
        if stopper.improved:
            result.best_state = model.state()
            result.best_val = val
            result.best_epoch, result.best_step = epoch, step
        log.info("epoch %d val MRR %.4f (best %.4f @ %d)", epoch, val, stopper.best, stopper.best_epoch)
        if decision == "stop":
            break

    result.steps = step
    if out_dir is not None:
        write_run(result, out_dir)
    return result


def write_run(result: TrainResult, out_dir: str | Path) -> list[Path]:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    log_path = d / "loss_log.tsv"
    log_path.write_text("\n".join([LOG_HEADER, *result.log_lines]) + "\n", encoding="utf-8")
    model = result.model
    model.save(
        d / "last",
        {"step": result.steps, "epoch": result.epochs_run, "val_metric": _fmt(result.val_history[-1]) if result.val_history else "nan"},
    )
    model.save(
        d / "best",
        {"step": result.best_step, "epoch": result.best_epoch, "val_metric": _fmt(result.best_val)},
        state=result.best_state,
    )
    return [log_path, d / "last", d / "best"]
