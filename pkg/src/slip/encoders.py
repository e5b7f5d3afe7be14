"""Per-modality encoders over precomputed features.

These stand in for pretrained image/text backbones: a stack of linear
projections over frozen feature vectors, followed by row-wise l2
normalisation. ``EmbeddingTableEncoder`` is the feature-free alternative.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .autodiff import Tensor, l2_normalize_rows, matmul, take_rows
from .graph import FormatError

MODALITIES = ("image", "text")


class MissingFeatureError(KeyError):
    pass


@dataclass
class FeatureStore:
    """Feature vectors for one modality, keyed by item id."""

    modality: str
    dim: int
    features: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        for key, vec in self.features.items():
            self.features[key] = self._check(key, vec)

    def _check(self, key: str, vec) -> np.ndarray:
        arr = np.asarray(vec, dtype=np.float64).reshape(-1)
        if arr.shape[0] != self.dim:
            raise ValueError(f"feature for {key!r} has length {arr.shape[0]}, expected {self.dim}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"feature for {key!r} is not finite")
        return arr

    def __contains__(self, key: str) -> bool:
        return key in self.features

    def __len__(self) -> int:
        return len(self.features)

    def add(self, key: str, vec) -> None:
        self.features[key] = self._check(key, vec)

    def matrix(self, keys: Sequence[str]) -> np.ndarray:
        missing = [k for k in keys if k not in self.features]
        if missing:
            raise MissingFeatureError(f"no {self.modality} feature for node {missing[0]!r}")
        if not keys:
            return np.zeros((0, self.dim))
        return np.stack([self.features[k] for k in keys])

    def subset(self, keys: Iterable[str]) -> FeatureStore:
        return FeatureStore(self.modality, self.dim, {k: self.features[k] for k in keys})

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureStore):
            return NotImplemented
        return (
            self.modality == other.modality
            and self.dim == other.dim
            and self.features.keys() == other.features.keys()
            and all(np.array_equal(v, other.features[k]) for k, v in self.features.items())
        )


@dataclass
class EncoderParams:
    """One linear projection ``x @ weight + bias``."""

    weight: Tensor
    bias: Tensor
    trainable: bool = True

    def __post_init__(self):
        if self.bias.shape != (1, self.weight.cols):
            raise ValueError(f"bias shape {self.bias.shape} does not match weight {self.weight.shape}")
        self.weight.requires_grad = self.trainable
        self.bias.requires_grad = self.trainable

    @classmethod
    def init(cls, dim_in: int, dim_out: int, rng: np.random.Generator, trainable: bool = True) -> EncoderParams:
        w = rng.normal(0.0, 1.0 / np.sqrt(dim_in), size=(dim_in, dim_out))
        return cls(Tensor(w), Tensor(np.zeros((1, dim_out))), trainable)

    def tensors(self) -> list[Tensor]:
        return [self.weight, self.bias]


class LinearEncoder:
    """Stack of linear layers over frozen features.

    Layer ``layers[-1]`` is the output projection; its depth index is 0, the
    layer before it has depth 1, and so on.
    """

    def __init__(self, modality: str, layers: Sequence[EncoderParams], eps: float = 1e-12):
        if not layers:
            raise ValueError("encoder needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.weight.cols != b.weight.rows:
                raise ValueError("encoder layer widths do not chain")
        self.modality = modality
        self.layers = list(layers)
        self.eps = eps

    @classmethod
    def init(
        cls, modality: str, dim_in: int, dim_out: int, rng: np.random.Generator, depth: int = 1
    ) -> LinearEncoder:
        dims = [dim_in] * depth + [dim_out]
        return cls(modality, [EncoderParams.init(a, b, rng) for a, b in zip(dims, dims[1:])])

    @property
    def dim_out(self) -> int:
        return self.layers[-1].weight.cols

    def depth_groups(self) -> list[tuple[int, list[Tensor]]]:
        n = len(self.layers)
        return [(n - 1 - i, layer.tensors()) for i, layer in enumerate(self.layers) if layer.trainable]

    def named_tensors(self) -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"enc_{self.modality}_{i}_w"] = layer.weight
            out[f"enc_{self.modality}_{i}_b"] = layer.bias
        return out

    def encode(self, store: FeatureStore, keys: Sequence[str]) -> Tensor:
        return self.encode_matrix(store.matrix(keys))

    def encode_matrix(self, x) -> Tensor:
        h = Tensor.wrap(x)
        for layer in self.layers:
            h = matmul(h, layer.weight) + layer.bias
        return l2_normalize_rows(h, self.eps)


class EmbeddingTableEncoder:
    """One trainable row per item; for fully synthetic runs without features."""

    def __init__(self, modality: str, keys: Sequence[str], dim: int, rng: np.random.Generator):
        self.modality = modality
        self.index = {k: i for i, k in enumerate(keys)}
        self.table = Tensor(rng.normal(size=(len(keys), dim)), requires_grad=True)

    @property
    def dim_out(self) -> int:
        return self.table.cols

    def depth_groups(self) -> list[tuple[int, list[Tensor]]]:
        return [(0, [self.table])]

    def named_tensors(self) -> dict[str, Tensor]:
        return {f"table_{self.modality}": self.table}

    def encode(self, store: FeatureStore | None, keys: Sequence[str]) -> Tensor:
        missing = [k for k in keys if k not in self.index]
        if missing:
            raise MissingFeatureError(f"no {self.modality} embedding row for node {missing[0]!r}")
        return l2_normalize_rows(take_rows(self.table, [self.index[k] for k in keys]))


def encode_batch(store: FeatureStore, params: EncoderParams | Sequence[EncoderParams], node_ids: Sequence[str]) -> Tensor:
    """Normalised projections of the features of ``node_ids``."""
    layers = [params] if isinstance(params, EncoderParams) else list(params)
    return LinearEncoder(store.modality, layers).encode(store, node_ids)


# -- feature files ----------------------------------------------------------------


def write_features(store: FeatureStore, path: str | Path, order: Sequence[str] | None = None) -> None:
    keys = list(order) if order is not None else sorted(store.features)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"dim={store.dim} modality={store.modality}\n")
        for k in keys:
            fh.write(k + "\t" + ",".join(repr(float(x)) for x in store.features[k]) + "\n")


def read_features(path: str | Path) -> FeatureStore:
    """Parse ``dim=<d> modality=<m>`` followed by ``item<TAB>f1,...,fd`` lines."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        meta = dict(tok.split("=", 1) for tok in header.split() if "=" in tok)
        try:
            dim = int(meta["dim"])
            modality = meta["modality"]
        except (KeyError, ValueError):
            raise FormatError(path, 1, f"bad feature header {header!r}") from None
        if modality not in MODALITIES:
            raise FormatError(path, 1, f"unknown modality {modality!r}")
        store = FeatureStore(modality, dim)
        for lineno, line in enumerate(fh, 2):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0]:
                raise FormatError(path, lineno, "expected item_id<TAB>comma-separated floats")
            try:
                vec = [float(x) for x in parts[1].split(",")]
            except ValueError:
                raise FormatError(path, lineno, "non-numeric feature value") from None
            if len(vec) != dim:
                raise FormatError(path, lineno, f"expected {dim} values, got {len(vec)}")
            if not all(np.isfinite(vec)):
                raise FormatError(path, lineno, "non-finite feature value")
            if parts[0] in store:
                raise FormatError(path, lineno, f"duplicate item {parts[0]!r}")
            store.add(parts[0], vec)
    return store
