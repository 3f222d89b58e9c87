"""Shared feature mapping applied identically on every client.

Every client receives the same :class:`ProjectionSpec` (and therefore the
same seed), so the rows produced by different clients live in one common
subspace and their local clusterings can be compared by the server.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Protocol

import numpy as np

from .dataset import ClientDataset

LOGGER = logging.getLogger(__name__)


class ProjectionKind(str, Enum):
    IDENTITY = "identity"
    RANDOM_LINEAR = "random_linear"


@dataclass(frozen=True)
class ProjectionSpec:
    kind: ProjectionKind
    in_dim: int
    out_dim: Optional[int] = None
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ProjectionKind(self.kind))
        if self.in_dim < 1:
            raise ValueError("in_dim must be >= 1")
        if self.kind is ProjectionKind.RANDOM_LINEAR:
            if self.out_dim is None or not 1 <= self.out_dim <= self.in_dim:
                raise ValueError(f"random_linear out_dim must lie in [1, {self.in_dim}], got {self.out_dim}")


@dataclass(frozen=True)
class ProjectionMatrix:
    """A built projection. ``matrix`` is ``None`` for the identity map."""

    spec: ProjectionSpec
    matrix: Optional[np.ndarray] = None

    @property
    def out_dim(self) -> int:
        return self.spec.in_dim if self.matrix is None else int(self.matrix.shape[1])

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.spec.in_dim:
            raise ValueError(f"input dimension {x.shape[-1]} does not match projection in_dim {self.spec.in_dim}")
        if self.matrix is None:
            return x.copy()
        return x @ self.matrix


@dataclass(frozen=True)
class FeatureMatrix:
    """Row ``i`` is the mapped feature vector of the client's sample ``i``."""

    client_id: int
    rows: np.ndarray

    def __len__(self) -> int:
        return int(self.rows.shape[0])


class FeatureExtractor(Protocol):
    """Map a client's raw samples into the shared feature space."""

    def extract(self, client: ClientDataset) -> FeatureMatrix:
        ...


def build_projection(spec: ProjectionSpec) -> ProjectionMatrix:
    if spec.kind is ProjectionKind.IDENTITY:
        return ProjectionMatrix(spec=spec)
    assert spec.out_dim is not None
    rng = np.random.default_rng(spec.seed)
    matrix = rng.normal(0.0, np.sqrt(1.0 / spec.out_dim), size=(spec.in_dim, spec.out_dim))
    matrix.flags.writeable = False
    LOGGER.debug("Built %dx%d random projection (seed %d)", spec.in_dim, spec.out_dim, spec.seed)
    return ProjectionMatrix(spec=spec, matrix=matrix)


def extract_features(client: ClientDataset, proj: ProjectionMatrix) -> FeatureMatrix:
    """Project every sample of ``client``; labels are not part of the output."""

    if len(client) == 0:
        return FeatureMatrix(client_id=client.client_id, rows=np.zeros((0, proj.out_dim)))
    return FeatureMatrix(client_id=client.client_id, rows=proj.apply(client.dataset.features))


class ProjectionExtractor(FeatureExtractor):
    """Extractor backed by a fixed shared projection."""

    def __init__(self, spec: ProjectionSpec) -> None:
        self.projection = build_projection(spec)

    def extract(self, client: ClientDataset) -> FeatureMatrix:
        return extract_features(client, self.projection)


__all__ = [
    "ProjectionKind",
    "ProjectionSpec",
    "ProjectionMatrix",
    "FeatureMatrix",
    "FeatureExtractor",
    "ProjectionExtractor",
    "build_projection",
    "extract_features",
]
