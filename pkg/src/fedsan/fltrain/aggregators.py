"""Server aggregation rules: FedAvg and the robust baselines."""
from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from typing import Dict, Mapping, Sequence

import numpy as np

from .model import ModelParams

LOGGER = logging.getLogger(__name__)


def _stack(updates: Sequence[np.ndarray]) -> np.ndarray:
    if len(updates) == 0:
        raise ValueError("no updates to aggregate")
    stacked = np.asarray([np.asarray(u, dtype=np.float64) for u in updates])
    if stacked.ndim != 2:
        raise ValueError("updates must be equal-length vectors")
    return stacked


def fedavg_aggregate(global_params: ModelParams, updates: Sequence[np.ndarray], server_lr: float, num_clients: int) -> ModelParams:
    """``G + (eta / N) * sum(delta_i)`` with ``N`` as passed by the caller."""

    global_params = np.asarray(global_params, dtype=np.float64)
    if not updates:
        return global_params.copy()
    stacked = _stack(updates)
    if stacked.shape[1] != global_params.shape[0]:
        raise ValueError(f"update length {stacked.shape[1]} != model length {global_params.shape[0]}")
    return global_params + (server_lr / num_clients) * stacked.sum(axis=0)


def krum_scores(updates: Sequence[np.ndarray], f: int) -> np.ndarray:
    """Sum of squared distances from each update to its ``n - f - 2`` nearest peers."""

    stacked = _stack(updates)
    n = stacked.shape[0]
    if n < 2 * f + 3:
        raise ValueError(f"krum needs at least 2f+3={2 * f + 3} updates, got {n}")
    sq_norms = np.sum(stacked**2, axis=1)
    distances = np.maximum(sq_norms[:, None] + sq_norms[None, :] - 2.0 * stacked @ stacked.T, 0.0)
    np.fill_diagonal(distances, np.inf)
    nearest = np.sort(distances, axis=1)[:, : n - f - 2]
    return nearest.sum(axis=1)


def krum_aggregate(updates: Sequence[np.ndarray], f: int) -> np.ndarray:
    """The single update with the lowest Krum score (ties to the lowest index)."""

    index = int(np.argmin(krum_scores(updates, f)))
    return np.array(updates[index], dtype=np.float64)


def trimmed_mean_aggregate(updates: Sequence[np.ndarray], trim_fraction: float) -> np.ndarray:
    """Per coordinate: sort, drop ``floor(trim * n)`` from each end, average the rest."""

    if not 0.0 <= trim_fraction < 0.5:
        raise ValueError("trim_fraction must lie in [0, 0.5)")
    stacked = _stack(updates)
    n = stacked.shape[0]
    cut = int(np.floor(trim_fraction * n))
    if n - 2 * cut < 1:
        raise ValueError(f"trimming {cut} from each end of {n} updates leaves nothing")
    ordered = np.sort(stacked, axis=0)
    return ordered[cut : n - cut].mean(axis=0)


def median_aggregate(updates: Sequence[np.ndarray]) -> np.ndarray:
    return np.median(_stack(updates), axis=0)


def foolsgold_weights(update_history: Mapping[int, np.ndarray]) -> Dict[int, float]:
    """Per-client learning-rate weights in [0, 1] from accumulated update similarity.

    Clients whose histories point the same way as another client's are
    pushed towards 0. Clients with an all-zero history get weight 1.
    """

    ids = sorted(update_history)
    weights = {cid: 1.0 for cid in ids}
    active = [cid for cid in ids if np.any(update_history[cid])]
    if len(active) < 2:
        return weights

    history = np.asarray([update_history[cid] for cid in active], dtype=np.float64)
    unit = history / np.linalg.norm(history, axis=1, keepdims=True)
    n = len(active)
    cs = unit @ unit.T - np.eye(n)
    maxcs = np.max(cs, axis=1)

    # pardoning: a client is not penalised for resembling a more sybil-like peer
    for i in range(n):
        for j in range(n):
            if i != j and maxcs[i] < maxcs[j]:
                cs[i, j] = cs[i, j] * maxcs[i] / maxcs[j]

    wv = 1.0 - np.max(cs, axis=1)
    wv = np.clip(wv, 0.0, 1.0)
    top = wv.max()
    if top <= 0.0:
        for cid in active:
            weights[cid] = 0.0
        return weights
    wv = wv / top
    wv[wv == 1.0] = 0.99
    with np.errstate(divide="ignore"):
        wv = np.log(wv / (1.0 - wv)) + 0.5
    wv[wv > 1.0] = 1.0
    wv[wv < 0.0] = 0.0
    for cid, value in zip(active, wv):
        weights[cid] = float(value)
    return weights


class Aggregator(ABC):
    """Turns one round of client updates into the next global model."""

    name = "aggregator"

    @abstractmethod
    def step(self, global_params: ModelParams, updates: Dict[int, np.ndarray]) -> ModelParams:
        """Args:
            global_params: Current global model ``G^t``.
            updates: ``client_id -> delta_i`` for the selected clients.
        """


class FedAvgAggregator(Aggregator):
    name = "fedavg"

    def __init__(self, server_lr: float, num_clients: int, average_over_selected: bool = False) -> None:
        self.server_lr = server_lr
        self.num_clients = num_clients
        self.average_over_selected = average_over_selected

    def step(self, global_params: ModelParams, updates: Dict[int, np.ndarray]) -> ModelParams:
        divisor = len(updates) if self.average_over_selected and updates else self.num_clients
        return fedavg_aggregate(global_params, [updates[c] for c in sorted(updates)], self.server_lr, divisor)


class _RobustAggregator(Aggregator):
    def __init__(self, server_lr: float) -> None:
        self.server_lr = server_lr

    @abstractmethod
    def combine(self, updates: Dict[int, np.ndarray]) -> np.ndarray:
        ...

    def step(self, global_params: ModelParams, updates: Dict[int, np.ndarray]) -> ModelParams:
        if not updates:
            return np.array(global_params, dtype=np.float64)
        return global_params + self.server_lr * self.combine(updates)


class KrumAggregator(_RobustAggregator):
    name = "krum"

    def __init__(self, server_lr: float, f: int) -> None:
        super().__init__(server_lr)
        self.f = f

    def combine(self, updates: Dict[int, np.ndarray]) -> np.ndarray:
        ids = sorted(updates)
        scores = krum_scores([updates[c] for c in ids], self.f)
        chosen = ids[int(np.argmin(scores))]
        LOGGER.debug("Krum selected client %d", chosen)
        return np.array(updates[chosen], dtype=np.float64)


class TrimmedMeanAggregator(_RobustAggregator):
    name = "trimmed_mean"

    def __init__(self, server_lr: float, trim_fraction: float) -> None:
        super().__init__(server_lr)
        self.trim_fraction = trim_fraction

    def combine(self, updates: Dict[int, np.ndarray]) -> np.ndarray:
        return trimmed_mean_aggregate([updates[c] for c in sorted(updates)], self.trim_fraction)


class MedianAggregator(_RobustAggregator):
    name = "median"

    def combine(self, updates: Dict[int, np.ndarray]) -> np.ndarray:
        return median_aggregate([updates[c] for c in sorted(updates)])


class FoolsGoldAggregator(_RobustAggregator):
    """Reweights each round's updates by similarity of the clients' full histories."""

    name = "foolsgold"

    def __init__(self, server_lr: float) -> None:
        super().__init__(server_lr)
        self.history: Dict[int, np.ndarray] = {}

    def combine(self, updates: Dict[int, np.ndarray]) -> np.ndarray:
        for cid, delta in updates.items():
            self.history[cid] = self.history.get(cid, 0.0) + np.asarray(delta, dtype=np.float64)
        ids = sorted(updates)
        weights = foolsgold_weights(self.history)
        w = np.array([weights[c] for c in ids])
        if w.sum() <= 0.0:
            LOGGER.warning("FoolsGold gave every selected client weight 0; skipping the update")
            return np.zeros_like(np.asarray(updates[ids[0]], dtype=np.float64))
        stacked = _stack([updates[c] for c in ids])
        return (w[:, None] * stacked).sum(axis=0) / w.sum()


__all__ = [
    "fedavg_aggregate",
    "krum_scores",
    "krum_aggregate",
    "trimmed_mean_aggregate",
    "median_aggregate",
    "foolsgold_weights",
    "Aggregator",
    "FedAvgAggregator",
    "KrumAggregator",
    "TrimmedMeanAggregator",
    "MedianAggregator",
    "FoolsGoldAggregator",
]
