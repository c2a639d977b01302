"""Resource-aware early-exit multi-scale dense convolutional network engine."""

from .cost import CostTable, classifier_costs, node_flops
from .data import Dataset, generate_mixture_dataset, split_dataset
from .errors import (
    BudgetTooSmallError,
    ConfigurationError,
    InputError,
    TrainingDivergedError,
    UsageError,
)
from .exit_policy import (
    ConfidenceProfile,
    ExitPlan,
    calibrate_thresholds,
    exit_distribution,
    expected_cost,
    make_plan,
    solve_budget,
)
from .graph import NetworkConfig, NetworkGraph, build, classifier_placement, config_hash
from .runtime import (
    EvalTrace,
    evaluate_anytime,
    evaluate_budgeted,
    forward_full,
    lazy_closures,
)
from .tensor import Tensor, backward
from .trainer import (
    TrainConfig,
    cumulative_loss,
    load_checkpoint,
    lr_schedule,
    save_checkpoint,
    sgd_nesterov_step,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "BudgetTooSmallError",
    "ConfidenceProfile",
    "ConfigurationError",
    "CostTable",
    "Dataset",
    "EvalTrace",
    "ExitPlan",
    "InputError",
    "NetworkConfig",
    "NetworkGraph",
    "Tensor",
    "TrainConfig",
    "TrainingDivergedError",
    "UsageError",
    "backward",
    "build",
    "calibrate_thresholds",
    "classifier_costs",
    "classifier_placement",
    "config_hash",
    "cumulative_loss",
    "evaluate_anytime",
    "evaluate_budgeted",
    "exit_distribution",
    "expected_cost",
    "forward_full",
    "generate_mixture_dataset",
    "lazy_closures",
    "load_checkpoint",
    "lr_schedule",
    "make_plan",
    "node_flops",
    "save_checkpoint",
    "sgd_nesterov_step",
    "solve_budget",
    "split_dataset",
    "train",
]
