"""Federated training loop: client selection, local SGD and server aggregation."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .. import metrics
from ..dataset import ClientDataset, Dataset
from ..sanitize import DefenseSettings, SanitizationResult
from .aggregators import (
    Aggregator,
    FedAvgAggregator,
    FoolsGoldAggregator,
    KrumAggregator,
    MedianAggregator,
    TrimmedMeanAggregator,
)
from .model import MLP, MLPLayout, init_mlp, loss_and_grad, mean_loss

LOGGER = logging.getLogger(__name__)

AGGREGATORS = ("fedavg", "krum", "trimmed_mean", "median", "foolsgold")


@dataclass
class TrainConfig:
    """Federated optimisation settings.

    Attributes:
        rounds: Communication rounds ``T``.
        participation: Fraction ``beta`` of clients selected per round.
        local_epochs: Local SGD epochs ``E``.
        batch_size: Minibatch size ``B``.
        local_lr: Client SGD step size.
        server_lr: Server learning rate ``eta``.
        aggregator: One of ``fedavg``, ``krum``, ``trimmed_mean``, ``median``, ``foolsgold``.
        krum_f: Assumed byzantine count for Krum.
        trim_fraction: Fraction trimmed from each end by the trimmed mean.
        average_over_selected: Divide FedAvg by the selected count instead of ``N``.
        hidden: Hidden layer width of the MLP.
    """

    rounds: int = 30
    participation: float = 0.8
    local_epochs: int = 1
    batch_size: int = 32
    local_lr: float = 0.05
    server_lr: float = 1.0
    aggregator: str = "fedavg"
    krum_f: int = 1
    trim_fraction: float = 0.1
    average_over_selected: bool = False
    hidden: int = 64

    def violations(self, num_clients: int) -> List[str]:
        problems: List[str] = []
        if self.rounds < 0:
            problems.append("training.rounds must be >= 0")
        if not 0.0 < self.participation <= 1.0:
            problems.append(f"training.participation must lie in (0, 1], got {self.participation}")
        if self.local_epochs < 1:
            problems.append("training.local_epochs must be >= 1")
        if self.batch_size < 1:
            problems.append("training.batch_size must be >= 1")
        if self.local_lr < 0:
            problems.append("training.local_lr must be >= 0")
        if not self.server_lr > 0:
            problems.append("training.server_lr must be > 0")
        if self.hidden < 1:
            problems.append("training.hidden must be >= 1")
        if self.aggregator not in AGGREGATORS:
            problems.append(f"training.aggregator must be one of {', '.join(AGGREGATORS)}, got {self.aggregator!r}")
        if not 0.0 <= self.trim_fraction < 0.5:
            problems.append("training.trim_fraction must lie in [0, 0.5)")
        if self.krum_f < 0:
            problems.append("training.krum_f must be >= 0")
        if self.aggregator == "krum" and 0.0 < self.participation <= 1.0:
            selected = clients_per_round(num_clients, self.participation)
            if selected < 2 * self.krum_f + 3:
                problems.append(
                    f"training.krum_f={self.krum_f} needs at least {2 * self.krum_f + 3} clients per round, "
                    f"participation selects {selected}"
                )
        return problems


@dataclass
class RoundRecord:
    round: int
    accuracy: float
    asr: float
    wall_ms: float
    asr_components: Dict[str, float] = field(default_factory=dict)
    selected: List[int] = field(default_factory=list)


@dataclass
class EvaluationSets:
    """Clean test set plus the attack sets ASR is measured on (``name -> (data, target)``)."""

    test: Dataset
    asr_sets: Dict[str, Tuple[Dataset, int]] = field(default_factory=dict)


@dataclass
class RunHistory:
    rows: List[RoundRecord]
    model: MLP
    sanitization: Optional[SanitizationResult] = None
    trained_clients: List[ClientDataset] = field(default_factory=list)

    @property
    def final(self) -> RoundRecord:
        return self.rows[-1]


def clients_per_round(num_clients: int, participation: float) -> int:
    return max(1, int(np.floor(participation * num_clients + 0.5)))


def select_clients(num_clients: int, participation: float, round_index: int, seed: int) -> List[int]:
    """Seeded sample without replacement of ``max(1, round(beta * N))`` client ids."""

    if not 0.0 < participation <= 1.0:
        raise ValueError("participation must lie in (0, 1]")
    count = min(clients_per_round(num_clients, participation), num_clients)
    rng = np.random.default_rng([seed, round_index])
    return sorted(int(cid) for cid in rng.choice(num_clients, size=count, replace=False))


def local_train(
    global_model: MLP, client: ClientDataset, cfg: TrainConfig, seed: int | Sequence[int] = 0
) -> MLP:
    """``E`` epochs of shuffled minibatch SGD on cross-entropy, starting from ``global_model``."""

    model = global_model.copy()
    n = len(client)
    if n == 0:
        return model
    x, y = client.dataset.features, client.dataset.labels
    rng = np.random.default_rng(seed)
    for _ in range(cfg.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            _, grad = loss_and_grad(model, x[batch], y[batch])
            model.params -= cfg.local_lr * grad
    if LOGGER.isEnabledFor(logging.DEBUG):
        LOGGER.debug("Client %d local loss %.6f", client.client_id, mean_loss(model, x, y))
    return model


def build_aggregator(cfg: TrainConfig, num_clients: int) -> Aggregator:
    if cfg.aggregator == "fedavg":
        return FedAvgAggregator(cfg.server_lr, num_clients, cfg.average_over_selected)
    if cfg.aggregator == "krum":
        return KrumAggregator(cfg.server_lr, cfg.krum_f)
    if cfg.aggregator == "trimmed_mean":
        return TrimmedMeanAggregator(cfg.server_lr, cfg.trim_fraction)
    if cfg.aggregator == "median":
        return MedianAggregator(cfg.server_lr)
    if cfg.aggregator == "foolsgold":
        return FoolsGoldAggregator(cfg.server_lr)
    raise ValueError(f"unknown aggregator {cfg.aggregator!r}")


def _record(round_index: int, model: MLP, evaluation: EvaluationSets, started: float, timed: bool, selected: List[int]) -> RoundRecord:
    accuracy, asr, components = metrics.evaluate(model, evaluation.test, evaluation.asr_sets)
    wall_ms = (time.perf_counter() - started) * 1000.0 if timed else 0.0
    LOGGER.info("Round %d: accuracy=%.4f asr=%.4f", round_index, accuracy, asr)
    return RoundRecord(
        round=round_index,
        accuracy=accuracy,
        asr=asr,
        wall_ms=wall_ms,
        asr_components=components,
        selected=selected,
    )


def run_federation(
    clients: Sequence[ClientDataset],
    evaluation: EvaluationSets,
    cfg: TrainConfig,
    seed: int,
    defense: Optional[DefenseSettings] = None,
    workers: int = 1,
    record_wall_time: bool = False,
) -> RunHistory:
    """Optionally sanitize once, then run ``cfg.rounds`` rounds of federated training.

    Row 0 holds the metrics of the untrained model; the defense time is
    charged to it.
    """

    if not clients:
        raise ValueError("no clients to train")
    num_clients = len(clients)
    dim = clients[0].dataset.dim
    num_classes = clients[0].dataset.num_classes
    if evaluation.test.dim != dim:
        raise ValueError(f"test dimension {evaluation.test.dim} != training dimension {dim}")

    started = time.perf_counter()
    sanitization: Optional[SanitizationResult] = None
    training_clients = list(clients)
    if defense is not None:
        training_clients, sanitization = defense.run(training_clients, num_classes, workers=workers)

    model = init_mlp(MLPLayout(dim, cfg.hidden, num_classes), seed)
    aggregator = build_aggregator(cfg, num_clients)
    rows = [_record(0, model, evaluation, started, record_wall_time, [])]

    by_id = {client.client_id: client for client in training_clients}
    for round_index in range(1, cfg.rounds + 1):
        started = time.perf_counter()
        selected = select_clients(num_clients, cfg.participation, round_index, seed)

        def train_one(cid: int) -> np.ndarray:
            local = local_train(model, by_id[cid], cfg, seed=[seed, round_index, cid])
            return local.params - model.params

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                deltas = list(pool.map(train_one, selected))
        else:
            deltas = [train_one(cid) for cid in selected]
        model = model.with_params(aggregator.step(model.params, dict(zip(selected, deltas))))
        rows.append(_record(round_index, model, evaluation, started, record_wall_time, selected))

    return RunHistory(rows=rows, model=model, sanitization=sanitization, trained_clients=training_clients)


__all__ = [
    "AGGREGATORS",
    "TrainConfig",
    "RoundRecord",
    "EvaluationSets",
    "RunHistory",
    "clients_per_round",
    "select_clients",
    "local_train",
    "build_aggregator",
    "run_federation",
]
