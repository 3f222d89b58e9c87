"""Data poisoning attacks: label flipping, backdoor triggers and their hybrid."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .dataset import ClientDataset, Dataset, ceil_fraction

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class TriggerSpec:
    """Binary mask ``m`` and pattern ``p``; a poisoned input is ``(1 - m) * x + m * p``."""

    mask: np.ndarray
    pattern: np.ndarray

    def __post_init__(self) -> None:
        mask = np.asarray(self.mask, dtype=np.float64).reshape(-1)
        pattern = np.asarray(self.pattern, dtype=np.float64).reshape(-1)
        if mask.shape != pattern.shape:
            raise ValueError(f"mask length {mask.size} != pattern length {pattern.size}")
        if not np.isin(mask, (0.0, 1.0)).all():
            raise ValueError("trigger mask must be binary")
        mask.flags.writeable = False
        pattern.flags.writeable = False
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "pattern", pattern)

    @property
    def dim(self) -> int:
        return int(self.mask.size)

    @classmethod
    def rect(
        cls,
        image_shape: Tuple[int, int],
        row: int,
        col: int,
        height: int,
        width: int,
        value: float = 1.0,
    ) -> "TriggerSpec":
        """Solid rectangular patch. Negative ``row``/``col`` count from the bottom/right edge."""

        rows, cols = image_shape
        top = row if row >= 0 else rows + row
        left = col if col >= 0 else cols + col
        bottom = int(np.clip(top + height, 0, rows))
        right = int(np.clip(left + width, 0, cols))
        top, left = int(np.clip(top, 0, rows)), int(np.clip(left, 0, cols))
        mask = np.zeros((rows, cols))
        mask[top:bottom, left:right] = 1.0
        if not mask.any():
            raise ValueError(f"trigger rectangle ({row}, {col}, {height}x{width}) misses the {rows}x{cols} image")
        pattern = np.zeros((rows, cols))
        pattern[top:bottom, left:right] = value
        return cls(mask=mask, pattern=pattern)


class AttackKind(str, Enum):
    LABEL_FLIP = "label_flip"
    BACKDOOR = "backdoor"
    HYBRID = "hybrid"


@dataclass(frozen=True)
class LabelFlip:
    source: int
    target: int


@dataclass(frozen=True)
class Backdoor:
    trigger: TriggerSpec
    target: int


@dataclass(frozen=True)
class AttackPlan:
    """What the adversaries do and how many of them there are.

    ``poison_ratio`` is the fraction of eligible samples poisoned on each
    adversarial client; ``adversary_fraction`` the fraction of clients that
    are adversarial. ``hybrid_flip_share`` splits the hybrid budget.
    """

    kind: AttackKind
    poison_ratio: float
    adversary_fraction: float
    seed: int = 0
    flip: Optional[LabelFlip] = None
    backdoor: Optional[Backdoor] = None
    hybrid_flip_share: float = 0.5

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", AttackKind(self.kind))
        if not 0.0 < self.poison_ratio <= 1.0:
            raise ValueError("poison_ratio must lie in (0, 1]")
        if not 0.0 <= self.adversary_fraction <= 1.0:
            raise ValueError("adversary_fraction must lie in [0, 1]")
        if not 0.0 <= self.hybrid_flip_share <= 1.0:
            raise ValueError("hybrid_flip_share must lie in [0, 1]")
        if self.kind in (AttackKind.LABEL_FLIP, AttackKind.HYBRID):
            if self.flip is None:
                raise ValueError(f"{self.kind.value} attack needs label flip parameters")
            if self.flip.source == self.flip.target:
                raise ValueError("label flip source and target must differ")
        if self.kind in (AttackKind.BACKDOOR, AttackKind.HYBRID) and self.backdoor is None:
            raise ValueError(f"{self.kind.value} attack needs backdoor parameters")

    def class_ids(self) -> List[int]:
        ids: List[int] = []
        if self.flip is not None and self.kind is not AttackKind.BACKDOOR:
            ids += [self.flip.source, self.flip.target]
        if self.backdoor is not None and self.kind is not AttackKind.LABEL_FLIP:
            ids.append(self.backdoor.target)
        return ids


def apply_trigger(x: np.ndarray, trigger: TriggerSpec) -> np.ndarray:
    """Blend ``trigger`` into a vector (or each row of a matrix); ``x`` is not modified."""

    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != trigger.dim:
        raise ValueError(f"input length {x.shape[-1]} does not match trigger length {trigger.dim}")
    return (1.0 - trigger.mask) * x + trigger.mask * trigger.pattern


def adversarial_client_ids(num_clients: int, plan: AttackPlan) -> List[int]:
    """The first ``ceil(adversary_fraction * N)`` ids of a seeded client shuffle."""

    count = ceil_fraction(plan.adversary_fraction, num_clients)
    order = np.random.default_rng(plan.seed).permutation(num_clients)
    return sorted(int(cid) for cid in order[:count])


def _pick(rng: np.random.Generator, eligible: np.ndarray, fraction: float) -> np.ndarray:
    count = ceil_fraction(fraction, len(eligible))
    if count == 0:
        return np.empty(0, dtype=np.int64)
    return np.sort(rng.choice(eligible, size=count, replace=False))


def _poison_one(client: ClientDataset, plan: AttackPlan) -> ClientDataset:
    rng = np.random.default_rng([plan.seed, client.client_id])
    features = np.array(client.dataset.features)
    labels = np.array(client.dataset.labels)
    flags = np.array(client.poison_flags)

    flip_fraction = plan.poison_ratio
    backdoor_fraction = plan.poison_ratio
    if plan.kind is AttackKind.HYBRID:
        flip_fraction = plan.poison_ratio * plan.hybrid_flip_share
        backdoor_fraction = plan.poison_ratio * (1.0 - plan.hybrid_flip_share)

    if plan.kind in (AttackKind.LABEL_FLIP, AttackKind.HYBRID):
        assert plan.flip is not None
        eligible = np.flatnonzero((labels == plan.flip.source) & ~flags)
        if eligible.size == 0:
            LOGGER.warning("Client %d has no samples of class %d to flip", client.client_id, plan.flip.source)
        chosen = _pick(rng, eligible, flip_fraction)
        labels[chosen] = plan.flip.target
        flags[chosen] = True

    if plan.kind in (AttackKind.BACKDOOR, AttackKind.HYBRID):
        assert plan.backdoor is not None
        eligible = np.flatnonzero((labels != plan.backdoor.target) & ~flags)
        if eligible.size == 0:
            LOGGER.warning("Client %d has no non-target samples to backdoor", client.client_id)
        chosen = _pick(rng, eligible, backdoor_fraction)
        features[chosen] = apply_trigger(features[chosen], plan.backdoor.trigger)
        labels[chosen] = plan.backdoor.target
        flags[chosen] = True

    return ClientDataset(
        client_id=client.client_id,
        dataset=client.dataset.replace(features=features, labels=labels),
        poison_flags=flags,
        source_indices=client.source_indices,
    )


def poison_clients(clients: Sequence[ClientDataset], plan: AttackPlan) -> List[ClientDataset]:
    """Poison the seeded adversarial subset of ``clients``; others are returned untouched."""

    num_classes = clients[0].dataset.num_classes if clients else 0
    for class_id in plan.class_ids():
        if not 0 <= class_id < num_classes:
            raise ValueError(f"attack references class {class_id} but the data has {num_classes} classes")
    adversaries = set(adversarial_client_ids(len(clients), plan))
    LOGGER.info("Adversarial clients (%s): %s", plan.kind.value, sorted(adversaries))
    poisoned = [_poison_one(c, plan) if c.client_id in adversaries else c for c in clients]
    LOGGER.info("Poisoned %d samples in total", sum(int(c.poison_flags.sum()) for c in poisoned))
    return poisoned


def build_triggered_testset(test: Dataset, trigger: TriggerSpec, target: int) -> Dataset:
    """Triggered copies of every test sample whose true label is not ``target``.

    The returned labels are the ORIGINAL labels, so attack success is measured
    as predictions equal to ``target``.
    """

    if len(test) == 0:
        raise ValueError("test set is empty")
    keep = np.flatnonzero(test.labels != target)
    if keep.size == 0:
        raise ValueError(f"every test sample already has the target label {target}")
    kept = test.subset(keep)
    return kept.replace(features=apply_trigger(kept.features, trigger))


def build_flip_testset(test: Dataset, source: int) -> Dataset:
    """Clean test samples of the flipped source class."""

    keep = np.flatnonzero(test.labels == source)
    if keep.size == 0:
        raise ValueError(f"test set has no samples of class {source}")
    return test.subset(keep)


__all__ = [
    "TriggerSpec",
    "AttackKind",
    "LabelFlip",
    "Backdoor",
    "AttackPlan",
    "apply_trigger",
    "adversarial_client_ids",
    "poison_clients",
    "build_triggered_testset",
    "build_flip_testset",
]
