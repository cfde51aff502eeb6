"""Latent forward and conjugate dynamics for procedure and walkthrough planning."""

from .baselines import build_index, random_plan, retrieval_plan, rnn_policy_plan
from .dataset import Dataset, SequenceExample, read_dataset, write_dataset
from .errors import (
    CapacityError,
    ConfigError,
    DdnError,
    DimensionError,
    FormatError,
    GenerationError,
    NumericError,
    PlannerError,
    RangeError,
    UsageError,
    ValidationError,
)
from .metrics import EvalReport, evaluate, evaluate_walkthrough
from .model import DdnModel, ModelConfig, rollout_losses
from .planner import PlannerConfig, PlanResult, plan
from .synth import make_dataset, make_renderer, sample_task
from .training import Checkpoint, TrainConfig, read_checkpoint, train, write_checkpoint
from .walkthrough import best_permutation, score_matrix, walkthrough_plan

__all__ = [
    "CapacityError",
    "Checkpoint",
    "ConfigError",
    "Dataset",
    "DdnError",
    "DdnModel",
    "DimensionError",
    "EvalReport",
    "FormatError",
    "GenerationError",
    "ModelConfig",
    "NumericError",
    "PlanResult",
    "PlannerConfig",
    "PlannerError",
    "RangeError",
    "SequenceExample",
    "TrainConfig",
    "UsageError",
    "ValidationError",
    "best_permutation",
    "build_index",
    "evaluate",
    "evaluate_walkthrough",
    "make_dataset",
    "make_renderer",
    "plan",
    "random_plan",
    "read_checkpoint",
    "read_dataset",
    "retrieval_plan",
    "rnn_policy_plan",
    "rollout_losses",
    "sample_task",
    "score_matrix",
    "train",
    "walkthrough_plan",
    "write_checkpoint",
    "write_dataset",
]
