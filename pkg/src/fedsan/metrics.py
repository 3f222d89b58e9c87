"""Accuracy, attack success rate and sanitization quality."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .dataset import Dataset

if TYPE_CHECKING:  # pragma: no cover
    from .fltrain.model import MLP


@dataclass
class MetricsReport:
    """Headline numbers of a run; rates lie in [0, 1], sanitization fields are None without the defense."""

    accuracy: float
    attack_success_rate: float
    asr_components: Dict[str, float] = field(default_factory=dict)
    sanitization_precision: Optional[float] = None
    sanitization_recall: Optional[float] = None
    removed_count: int = 0
    accuracy_series: List[float] = field(default_factory=list)
    asr_series: List[float] = field(default_factory=list)


def accuracy(model: "MLP", test: Dataset) -> float:
    """Fraction of samples whose argmax prediction equals the true label."""

    if len(test) == 0:
        raise ValueError("accuracy is undefined on an empty test set")
    return float(np.mean(model.predict(test.features) == test.labels))


def attack_success_rate(model: "MLP", triggered: Dataset, target: int) -> float:
    """Fraction of attacked samples classified as ``target``.

    ``triggered`` must not contain samples whose true label is ``target``.
    """

    if len(triggered) == 0:
        raise ValueError("attack success rate is undefined on an empty set")
    if np.any(triggered.labels == target):
        raise ValueError(f"attack set contains samples whose true label is the target {target}")
    return float(np.mean(model.predict(triggered.features) == target))


def sanitization_quality(
    removed: Sequence[Sequence[int] | np.ndarray], poison_flags: Sequence[np.ndarray]
) -> Tuple[float, float]:
    """Precision and recall of removed samples against ground-truth poison flags.

    Entries are aligned per client. Precision is 1.0 when nothing was removed;
    recall is 1.0 when nothing was poisoned.
    """

    if len(removed) != len(poison_flags):
        raise ValueError("removed sets and poison flags must be aligned per client")
    hits = removed_total = poisoned_total = 0
    for removed_idx, flags in zip(removed, poison_flags):
        flags = np.asarray(flags, dtype=bool)
        removed_idx = np.unique(np.asarray(removed_idx, dtype=np.int64))
        if removed_idx.size and (removed_idx.min() < 0 or removed_idx.max() >= flags.size):
            raise ValueError("removed index out of range for its client")
        hits += int(flags[removed_idx].sum())
        removed_total += int(removed_idx.size)
        poisoned_total += int(flags.sum())
    precision = hits / removed_total if removed_total else 1.0
    recall = hits / poisoned_total if poisoned_total else 1.0
    return precision, recall


def evaluate(
    model: "MLP", test: Dataset, asr_sets: Mapping[str, Tuple[Dataset, int]]
) -> Tuple[float, float, Dict[str, float]]:
    """Accuracy, the mean ASR over every attack set, and each component.

    With no attack sets the ASR is NaN.
    """

    components = {name: attack_success_rate(model, data, target) for name, (data, target) in sorted(asr_sets.items())}
    asr = float(np.mean(list(components.values()))) if components else math.nan
    return accuracy(model, test), asr, components


__all__ = ["MetricsReport", "accuracy", "attack_success_rate", "sanitization_quality", "evaluate"]
