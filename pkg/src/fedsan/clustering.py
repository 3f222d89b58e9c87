"""Local k-means per client and one-shot federated aggregation of the centers."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .features import FeatureMatrix

LOGGER = logging.getLogger(__name__)

ClusterKey = Tuple[int, int]


@dataclass(frozen=True)
class ClusterSummary:
    """What the separation test needs to know about a cluster."""

    mean: np.ndarray
    delta: float


@dataclass
class LocalClustering:
    """Result of k-means on one client's feature rows.

    Attributes:
        client_id: Owning client.
        assignments: Cluster index per feature row.
        centers: ``(k, d')`` cluster means.
        k: Local cluster count ``k_i``.
        deltas: Spread term per cluster (NaN for an empty cluster).
        cost: Sum of squared distances to the assigned centers.
        cost_trace: Cost after every Lloyd update of the winning restart.
        violations: Cluster pairs failing the separation test.
    """

    client_id: int
    assignments: np.ndarray
    centers: np.ndarray
    k: int
    deltas: np.ndarray
    cost: float
    cost_trace: List[float] = field(default_factory=list)
    violations: List[Tuple[int, int]] = field(default_factory=list)

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.k)

    def nonempty(self) -> List[int]:
        return [int(c) for c in np.flatnonzero(self.sizes)]


@dataclass
class GlobalClustering:
    """Server-side meta-clusters and the map from each submitted local center."""

    global_centers: np.ndarray
    center_map: Dict[ClusterKey, int]

    @property
    def k(self) -> int:
        return int(self.global_centers.shape[0])

    def global_assignments(self, local: LocalClustering) -> np.ndarray:
        """Meta-cluster index of every row of ``local``'s client."""

        lookup = np.full(local.k, -1, dtype=np.int64)
        for c in local.nonempty():
            lookup[c] = self.center_map[(local.client_id, c)]
        return lookup[local.assignments]


def _rows(A: FeatureMatrix | np.ndarray) -> np.ndarray:
    rows = A.rows if isinstance(A, FeatureMatrix) else A
    return np.asarray(rows, dtype=np.float64)


def _sq_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    sq = (
        np.sum(points**2, axis=1)[:, None]
        + np.sum(centers**2, axis=1)[None, :]
        - 2.0 * points @ centers.T
    )
    return np.maximum(sq, 0.0)


def kmeans_cost(A: FeatureMatrix | np.ndarray, assignments: np.ndarray, centers: np.ndarray) -> float:
    """Sum of squared distances from each row to the center it is assigned to."""

    rows = _rows(A)
    centers = np.asarray(centers, dtype=np.float64)
    residual = rows - centers[np.asarray(assignments, dtype=np.int64)]
    return float(np.sum(residual**2))


def cluster_delta(A: FeatureMatrix | np.ndarray, members: Sequence[int] | np.ndarray, k: int) -> float:
    """``sqrt(k) * ||R||_F / sqrt(|U|)``.

    Row ``j`` of ``R`` is ``A_j`` minus its nearest member of ``U``; rows
    inside ``U`` contribute zero.
    """

    rows = _rows(A)
    members = np.unique(np.asarray(members, dtype=np.int64))
    if members.size == 0:
        raise ValueError("cluster_delta needs a nonempty member set")
    outside = np.setdiff1d(np.arange(rows.shape[0]), members)
    residual_sq = 0.0
    if outside.size:
        residual_sq = float(np.sum(np.min(_sq_distances(rows[outside], rows[members]), axis=1)))
    return float(np.sqrt(k) * np.sqrt(residual_sq) / np.sqrt(members.size))


def check_separation(c1: ClusterSummary, c2: ClusterSummary, m_const: float) -> bool:
    """True iff ``||mu_r - mu_s|| >= m_const * (delta_r + delta_s)``."""

    if not m_const > 0:
        raise ValueError("m_const must be > 0")
    gap = float(np.linalg.norm(np.asarray(c1.mean) - np.asarray(c2.mean)))
    return gap >= m_const * (c1.delta + c2.delta)


def _kmeans_plusplus(rows: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = rows.shape[0]
    chosen = [int(rng.integers(n))]
    closest = _sq_distances(rows, rows[chosen])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=closest / total))
        else:
            nxt = int(rng.integers(n))
        chosen.append(nxt)
        closest = np.minimum(closest, _sq_distances(rows, rows[[nxt]])[:, 0])
    return rows[chosen].copy()


def _update_centers(rows: np.ndarray, assignments: np.ndarray, centers: np.ndarray) -> np.ndarray:
    k = centers.shape[0]
    updated = centers.copy()
    for c in range(k):
        mask = assignments == c
        if mask.any():
            updated[c] = rows[mask].mean(axis=0)
    return updated


def _reseed_empty(rows: np.ndarray, assignments: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Move each empty cluster onto the row farthest from its own center."""

    k = centers.shape[0]
    used: set[int] = set()
    for c in range(k):
        if np.any(assignments == c):
            continue
        own = np.sum((rows - centers[assignments]) ** 2, axis=1)
        own[list(used)] = -1.0
        donor_row = int(np.argmax(own))
        donor = int(assignments[donor_row])
        used.add(donor_row)
        assignments[donor_row] = c
        centers[c] = rows[donor_row]
        if np.any(assignments == donor):
            centers[donor] = rows[assignments == donor].mean(axis=0)
    return centers


def _lloyd(
    rows: np.ndarray, centers: np.ndarray, max_iters: int
) -> Tuple[np.ndarray, np.ndarray, List[float]]:
    assignments = np.argmin(_sq_distances(rows, centers), axis=1)
    centers = _update_centers(rows, assignments, centers)
    centers = _reseed_empty(rows, assignments, centers)
    trace = [kmeans_cost(rows, assignments, centers)]
    for _ in range(max_iters - 1):
        updated = np.argmin(_sq_distances(rows, centers), axis=1)
        if np.array_equal(updated, assignments):
            break
        assignments = updated
        centers = _update_centers(rows, assignments, centers)
        centers = _reseed_empty(rows, assignments, centers)
        trace.append(kmeans_cost(rows, assignments, centers))
    return assignments, centers, trace


def local_kmeans(
    A: FeatureMatrix | np.ndarray,
    k: int,
    seed: int,
    restarts: int = 5,
    max_iters: int = 100,
    m_const: float = 4.0,
) -> LocalClustering:
    """k-means++ seeding plus Lloyd iterations, best of ``restarts`` runs.

    Iteration stops when assignments no longer change or after ``max_iters``
    updates. Every pair of nonempty clusters is then checked for separation;
    violations are logged and recorded but do not stop the run.
    """

    rows = _rows(A)
    client_id = A.client_id if isinstance(A, FeatureMatrix) else -1
    n = rows.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < 1:
        raise ValueError("local_kmeans needs at least one row")
    if k > n:
        raise ValueError(f"k={k} exceeds the {n} available rows")

    best: Tuple[np.ndarray, np.ndarray, List[float]] | None = None
    best_cost = np.inf
    for restart in range(max(restarts, 1)):
        rng = np.random.default_rng([seed, restart])
        assignments, centers, trace = _lloyd(rows, _kmeans_plusplus(rows, k, rng), max_iters)
        if trace[-1] < best_cost:
            best, best_cost = (assignments, centers, trace), trace[-1]
    assert best is not None
    assignments, centers, trace = best

    deltas = np.full(k, np.nan)
    for c in range(k):
        members = np.flatnonzero(assignments == c)
        if members.size:
            deltas[c] = cluster_delta(rows, members, k)

    result = LocalClustering(
        client_id=client_id,
        assignments=assignments,
        centers=centers,
        k=k,
        deltas=deltas,
        cost=kmeans_cost(rows, assignments, centers),
        cost_trace=trace,
    )
    occupied = result.nonempty()
    for i, r in enumerate(occupied):
        for s in occupied[i + 1 :]:
            ok = check_separation(
                ClusterSummary(centers[r], float(deltas[r])),
                ClusterSummary(centers[s], float(deltas[s])),
                m_const,
            )
            if not ok:
                result.violations.append((r, s))
                LOGGER.warning(
                    "Client %d: clusters %d and %d violate the separation condition (m=%.3g)",
                    client_id,
                    r,
                    s,
                    m_const,
                )
    return result


def federated_aggregate(locals_: Sequence[LocalClustering], k: int, seed: int) -> GlobalClustering:
    """Cluster every submitted local center into ``k`` meta-clusters in one round.

    Initial centers come from farthest-point traversal over the pooled
    centers (seeded first pick, ties to the lowest ``(client_id, c)``),
    followed by exactly one assignment and mean update.
    """

    keys: List[ClusterKey] = []
    points: List[np.ndarray] = []
    for local in sorted(locals_, key=lambda item: item.client_id):
        for c in local.nonempty():
            keys.append((local.client_id, c))
            points.append(local.centers[c])
    if len(points) < k:
        raise ValueError(f"only {len(points)} local centers submitted for k={k} global clusters")
    pooled = np.asarray(points, dtype=np.float64)

    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(len(pooled)))]
    farthest = _sq_distances(pooled, pooled[chosen])[:, 0]
    for _ in range(1, k):
        nxt = int(np.argmax(farthest))
        chosen.append(nxt)
        farthest = np.minimum(farthest, _sq_distances(pooled, pooled[[nxt]])[:, 0])
    initial = pooled[chosen]

    assignment = np.argmin(_sq_distances(pooled, initial), axis=1)
    global_centers = _update_centers(pooled, assignment, initial)
    center_map = {key: int(s) for key, s in zip(keys, assignment)}
    LOGGER.info("Aggregated %d local centers into %d global clusters", len(pooled), k)
    return GlobalClustering(global_centers=global_centers, center_map=center_map)


__all__ = [
    "ClusterSummary",
    "LocalClustering",
    "GlobalClustering",
    "kmeans_cost",
    "cluster_delta",
    "check_separation",
    "local_kmeans",
    "federated_aggregate",
]
