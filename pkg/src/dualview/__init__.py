"""Dual-view (local + global) cascaded reranker over cached embeddings."""

from dualview.data import (
    CandidateSet,
    SyntheticSpec,
    build_candidate_set,
    generate_synthetic,
    load_dataset,
    mine_hard_negatives,
    read_dataset,
    write_dataset,
)
from dualview.evaluation import CosineBaseline, MetricsReport, MLPBaseline, evaluate
from dualview.losses import LossConfig, combined_loss
from dualview.model import DualView, ModelConfig, ScoredCandidates, parameter_count
from dualview.training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "CandidateSet",
    "CosineBaseline",
    "DualView",
    "LossConfig",
    "MLPBaseline",
    "MetricsReport",
    "ModelConfig",
    "ScoredCandidates",
    "SyntheticSpec",
    "TrainConfig",
    "build_candidate_set",
    "combined_loss",
    "evaluate",
    "generate_synthetic",
    "load_dataset",
    "mine_hard_negatives",
    "parameter_count",
    "read_dataset",
    "train",
    "write_dataset",
]
