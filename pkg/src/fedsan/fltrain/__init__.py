"""Federated training: MLP model, aggregation rules and the round loop."""
from .model import MLP, MLPLayout, forward, init_mlp, loss_and_grad
from .aggregators import (
    fedavg_aggregate,
    foolsgold_weights,
    krum_aggregate,
    median_aggregate,
    trimmed_mean_aggregate,
)
from .federation import EvaluationSets, RunHistory, TrainConfig, local_train, run_federation, select_clients

__all__ = [
    "MLP",
    "MLPLayout",
    "forward",
    "init_mlp",
    "loss_and_grad",
    "fedavg_aggregate",
    "foolsgold_weights",
    "krum_aggregate",
    "median_aggregate",
    "trimmed_mean_aggregate",
    "EvaluationSets",
    "RunHistory",
    "TrainConfig",
    "local_train",
    "run_federation",
    "select_clients",
]
