"""Structure-aware contrastive image-text training on co-purchase graphs."""

from .config import TrainConfig, load_config
from .data import LabeledDataset, SyntheticSpec, generate_synthetic, load_dataset, load_dataset_dir, write_dataset
from .graph import InstanceGraph, build_masks, hop_distance_matrix, k_core, project_bipartite
from .metrics import retrieval_eval
from .trainer import train

__all__ = [
    "InstanceGraph",
    "LabeledDataset",
    "SyntheticSpec",
    "TrainConfig",
    "build_masks",
    "generate_synthetic",
    "hop_distance_matrix",
    "k_core",
    "load_config",
    "load_dataset",
    "load_dataset_dir",
    "project_bipartite",
    "retrieval_eval",
    "train",
    "write_dataset",
]
