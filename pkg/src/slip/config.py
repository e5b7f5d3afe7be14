"""Training configuration and the flat ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    # optimisation, defaults from the reported setup
    batch_size: int = 64
    epochs: int = 50
    base_lr: float = 1e-5
    layer_decay: float = 0.8
    graph_lr: float = 4e-3
    warmup_steps: int = 500
    patience: int = 10
    min_delta: float = 0.001
    steps_per_epoch: int = 0  # 0: ceil(train nodes / batch size)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    # objective
    hop: int = 1
    lambda_graph: float = 0.05
    lambda_aux: float = 0.1
    epsilon: float = 1e-8
    graph_loss: bool = True
    aux_loss: bool = True
    dlr: bool = True
    exclude_self: bool = False
    split_temperature: bool = False
    init_logit_scale: float = 1 / 0.07

    # architecture
    embed_dim: int = 32
    encoder: str = "linear"
    encoder_depth: int = 2
    gat_hidden: int = 64
    gat_heads: int = 4
    gat_dropout: float = 0.1
    fusion_activation: str = "elu"

    # data
    sampler: str = "bfs-expand"
    split_train: float = 0.6
    split_val: float = 0.1
    split_test: float = 0.3
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("base_lr", "graph_lr", "layer_decay"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.batch_size < 1 or self.epochs < 0 or self.hop < 1:
            raise ConfigError("batch_size and hop must be >= 1, epochs >= 0")
        if self.sampler not in ("uniform", "bfs-expand"):
            raise ConfigError(f"unknown sampler {self.sampler!r}")
        if self.encoder not in ("linear", "table"):
            raise ConfigError(f"unknown encoder {self.encoder!r}")
        if abs(self.split_train + self.split_val + self.split_test - 1.0) > 1e-9:
            raise ConfigError("split fractions must sum to 1")
        if self.embed_dim % self.gat_heads or self.gat_hidden % self.gat_heads:
            raise ConfigError("embed_dim and gat_hidden must be divisible by gat_heads")

    def replace(self, **changes) -> TrainConfig:
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return to_text(self)


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def field_types(cls: type = None) -> dict[str, type]:
    """Field name -> scalar type for a flat dataclass (``TrainConfig`` by default)."""
    hints = {"int": int, "float": float, "bool": bool, "str": str}
    cls = cls or TrainConfig
    return {f.name: hints[f.type] if isinstance(f.type, str) else f.type for f in fields(cls)}


def parse_value(key: str, raw: str, cls: type = None) -> Any:
    types = field_types(cls)
    if key not in types:
        raise ConfigError(f"unknown config key {key!r}")
    kind = types[key]
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def read_config_file(path: str | Path, cls: type = None) -> dict[str, Any]:
    values: dict[str, Any] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, raw = (s.strip() for s in line.split("=", 1))
            try:
                values[key] = parse_value(key, raw, cls)
            except ConfigError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return values


def load_config(path: str | Path | None = None, **overrides) -> TrainConfig:
    values = read_config_file(path) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(values) - set(field_types())
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]!r}")
    return TrainConfig(**values)


def to_text(obj) -> str:
    """Serialise any flat dataclass in the ``key = value`` format."""
    return "".join(f"{f.name} = {_format(getattr(obj, f.name))}\n" for f in fields(obj))
