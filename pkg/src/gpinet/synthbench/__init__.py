"""Synthetic same-set neighbour counting benchmark."""

from gpinet.synthbench.baselines import (
    FcBaseline,
    SeqBaseline,
    build_fc_baseline,
    build_gpi_baseline,
    build_matched_models,
    build_seq_baseline,
)
from gpinet.synthbench.sweep import summarize, sweep, threshold_size
from gpinet.synthbench.training import TrainConfig, TrialResult, train

__all__ = [
    "FcBaseline", "SeqBaseline", "TrainConfig", "TrialResult", "build_fc_baseline",
    "build_gpi_baseline", "build_matched_models", "build_seq_baseline", "summarize", "sweep",
    "threshold_size", "train",
]
