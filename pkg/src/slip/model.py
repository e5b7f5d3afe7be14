"""Parameter container tying encoders, graph path, classifier and temperature together."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Tensor, concat_cols, grad_check_params, read_tensor, write_tensor
from .config import TrainConfig, load_config
from .encoders import EmbeddingTableEncoder, FeatureStore, LinearEncoder
from .gat import StructuralParams, forward_structural
from .graph import InstanceGraph, build_masks, hop_distance_matrix
from .losses import (
    Classifier,
    LossParts,
    LossWeights,
    Temperature,
    aux_classification_loss,
    clip_infonce,
    structural_loss,
    total_loss,
)
from .optim import ParamGroup, assign_learning_rates

MANIFEST = "manifest.tsv"


class SlipModel:
    def __init__(
        self,
        config: TrainConfig,
        image_dim: int,
        text_dim: int,
        n_classes: int = 0,
        keys: Sequence[str] | None = None,
        rng: np.random.Generator | None = None,
    ):
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.config = config
        d = config.embed_dim
        if config.encoder == "table":
            if keys is None:
                raise ValueError("the table encoder needs the item keys")
            self.image_encoder = EmbeddingTableEncoder("image", keys, d, rng)
            self.text_encoder = EmbeddingTableEncoder("text", keys, d, rng)
        else:
            self.image_encoder = LinearEncoder.init("image", image_dim, d, rng, config.encoder_depth)
            self.text_encoder = LinearEncoder.init("text", text_dim, d, rng, config.encoder_depth)
        self.temperature = Temperature.from_scale(config.init_logit_scale)
        self.graph_temperature = (
            Temperature.from_scale(config.init_logit_scale) if config.split_temperature and config.graph_loss else None
        )
        self.structural = (
            StructuralParams.init(
                d, rng, config.gat_hidden, config.gat_heads, config.gat_dropout, config.fusion_activation
            )
            if config.graph_loss
            else None
        )
        # classifier input: fused Z with the graph path, else [E_v || E_t]
        self.classifier = (
            Classifier.init(d if config.graph_loss else 2 * d, n_classes, rng)
            if config.aux_loss and n_classes > 0
            else None
        )
        self.weights = LossWeights(config.lambda_graph, config.lambda_aux, config.epsilon)

    # -- parameters ----------------------------------------------------------------

    def named_tensors(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(self.image_encoder.named_tensors())
        out.update(self.text_encoder.named_tensors())
        out["logit_scale"] = self.temperature.t
        if self.graph_temperature is not None:
            out["graph_logit_scale"] = self.graph_temperature.t
        if self.structural is not None:
            out.update(self.structural.named_tensors())
        if self.classifier is not None:
            out["cls_w"] = self.classifier.weight
            out["cls_b"] = self.classifier.bias
        return out

    def param_groups(self) -> list[ParamGroup]:
        c = self.config
        enc = []
        for e in (self.image_encoder, self.text_encoder):
            enc += [(f"enc_{e.modality}_d{depth}", depth, ts) for depth, ts in e.depth_groups()]
        enc.append(("logit_scale", 0, [self.temperature.t]))
        heads = []
        if self.structural is not None:
            heads.append(("graph", self.structural.tensors()))
        if self.graph_temperature is not None:
            heads.append(("graph_logit_scale", [self.graph_temperature.t]))
        if self.classifier is not None:
            heads.append(("classifier", self.classifier.tensors()))
        return assign_learning_rates(enc, heads, c.base_lr, c.layer_decay, c.graph_lr, c.dlr)

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.named_tensors().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        tensors = self.named_tensors()
        if set(state) != set(tensors):
            missing = sorted(set(tensors) ^ set(state))
            raise ValueError(f"checkpoint sections do not match the model: {missing[:3]}")
        for k, t in tensors.items():
            if state[k].shape != t.shape:
                raise ValueError(f"section {k}: shape {state[k].shape} vs {t.shape}")
            t.data[...] = state[k]

    def clamp_(self) -> None:
        self.temperature.clamp_()
        if self.graph_temperature is not None:
            self.graph_temperature.clamp_()

    # -- forward -------------------------------------------------------------------

    def embed(self, image: FeatureStore, text: FeatureStore, keys: Sequence[str]) -> tuple[Tensor, Tensor]:
        return self.image_encoder.encode(image, keys), self.text_encoder.encode(text, keys)

    def batch_losses(
        self,
        image: FeatureStore,
        text: FeatureStore,
        keys: Sequence[str],
        adjacency: np.ndarray | None = None,
        masks=None,
        labels: np.ndarray | None = None,
        rng: np.random.Generator | None = None,
        train: bool = True,
    ) -> tuple[LossParts, Tensor, Tensor]:
        e_v, e_t = self.embed(image, text, keys)
        parts = LossParts(clip=clip_infonce(e_v, e_t, self.temperature))
        z = None
        if self.structural is not None and self.weights.lambda_graph > 0:
            z = forward_structural(e_v, e_t, adjacency, self.structural, rng, train)
            temp = self.graph_temperature or self.temperature
            parts.graph = structural_loss(z, masks, temp, self.weights, self.config.exclude_self)
        if self.classifier is not None and labels is not None and self.weights.lambda_aux > 0:
            if self.structural is not None:
                if z is None:
                    z = forward_structural(e_v, e_t, adjacency, self.structural, rng, train)
                feats = z
            else:
                feats = concat_cols([e_v, e_t])
            parts.aux = aux_classification_loss(self.classifier(feats), labels)
        total_loss(parts, self.weights)
        return parts, e_v, e_t

    # -- checkpoints ---------------------------------------------------------------

    def save(self, directory: str | Path, meta: dict | None = None, state: dict | None = None) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        state = state if state is not None else self.state()
        lines = ["name\trows\tcols"]
        for name, arr in state.items():
            write_tensor(d / f"{name}.slipt", arr)
            lines.append(f"{name}\t{arr.shape[0]}\t{arr.shape[1]}")
        (d / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")
        (d / "config").write_text(self.config.to_text(), encoding="utf-8")
        meta = meta or {}
        (d / "meta").write_text("".join(f"{k} = {v}\n" for k, v in meta.items()), encoding="utf-8")


def read_checkpoint(directory: str | Path) -> dict[str, np.ndarray]:
    d = Path(directory)
    rows = (d / MANIFEST).read_text(encoding="utf-8").splitlines()[1:]
    state = {}
    for line in rows:
        name, r, c = line.split("\t")
        arr = read_tensor(d / f"{name}.slipt")
        if arr.shape != (int(r), int(c)):
            raise ValueError(f"{d}: section {name} has shape {arr.shape}, manifest says {r}x{c}")
        state[name] = arr
    return state


def load_model(
    directory: str | Path, image_dim: int, text_dim: int, n_classes: int = 0, keys=None
) -> SlipModel:
    d = Path(directory)
    config = load_config(d / "config")
    state = read_checkpoint(d)
    if "cls_w" in state:
        n_classes = state["cls_w"].shape[1]
    model = SlipModel(config, image_dim, text_dim, n_classes, keys)
    model.load_state(state)
    return model



def full_loss_grad_check(
    n_nodes: int = 6, dim: int = 8, seed: int = 0, step: float = 1e-5, feature_dim: int = 5
) -> float:
    """Finite-difference check of the total objective w.r.t. every model parameter.

    Runs a random ``n_nodes`` batch on a connected random graph through the
    encoders, both attention stacks, fusion, and all three loss terms. Dropout
    is active but re-seeded for every evaluation, so each pass sees the same
    mask.
    """
    rng = np.random.default_rng(seed)
    config = TrainConfig(embed_dim=dim, gat_hidden=2 * dim, gat_heads=2, seed=seed)
    keys = [f"n{i}" for i in range(n_nodes)]
    image = FeatureStore("image", feature_dim, {k: rng.normal(size=feature_dim) for k in keys})
    text = FeatureStore("text", feature_dim + 2, {k: rng.normal(size=feature_dim + 2) for k in keys})
    edges = [(i, i + 1, 1) for i in range(n_nodes - 1)]
    edges += [(i, j, 1) for i in range(n_nodes) for j in range(i + 2, n_nodes) if rng.random() < 0.3]
    graph = InstanceGraph.from_edges(keys, edges)
    masks = build_masks(hop_distance_matrix(graph, range(n_nodes), config.hop), config.hop)
    labels = rng.integers(0, 3, size=n_nodes)
    model = SlipModel(config, image.dim, text.dim, 3, keys, rng)
    drop_seed = int(rng.integers(2**31))

    def loss():
        parts, _, _ = model.batch_losses(
            image, text, keys, graph.dense_adjacency(), masks, labels, np.random.default_rng(drop_seed), True
        )
        return parts.total

    return grad_check_params(loss, model.named_tensors().values(), step)
