"""Majority-vote labels for the federated clusters and per-client filtering.

The server only ever sees ``(global cluster, label)`` vote counts from the
clients, never their feature rows.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .clustering import GlobalClustering, LocalClustering, federated_aggregate, local_kmeans
from .dataset import ClientDataset
from .features import FeatureExtractor, ProjectionExtractor, ProjectionSpec

LOGGER = logging.getLogger(__name__)

UNASSIGNED: Optional[int] = None


@dataclass
class ClientSanitization:
    client_id: int
    kept_indices: np.ndarray
    removed_indices: np.ndarray


@dataclass
class SanitizationResult:
    """Per-client kept/removed indices plus the cluster labels they were judged by."""

    clients: List[ClientSanitization]
    cluster_labels: List[Optional[int]]
    tallies: np.ndarray
    skipped_clients: List[int] = field(default_factory=list)

    @property
    def removed_count(self) -> int:
        return int(sum(entry.removed_indices.size for entry in self.clients))

    def removed_by_client(self) -> Dict[int, np.ndarray]:
        return {entry.client_id: entry.removed_indices for entry in self.clients}

    def to_dict(self) -> dict:
        return {
            "cluster_labels": list(self.cluster_labels),
            "cluster_votes": self.tallies.astype(int).tolist(),
            "removed_count": self.removed_count,
            "removed_per_client": {str(e.client_id): int(e.removed_indices.size) for e in self.clients},
            "kept_per_client": {str(e.client_id): int(e.kept_indices.size) for e in self.clients},
            "skipped_clients": list(self.skipped_clients),
        }


def _vote(counts: np.ndarray) -> int:
    return int(np.argmax(counts))


def cluster_mode_label(labels: Sequence[int] | np.ndarray) -> int:
    """Most frequent label; ties go to the smallest class id."""

    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("cannot take the mode of an empty cluster")
    return _vote(np.bincount(labels))


def client_votes(client: ClientDataset, local: LocalClustering, global_map: GlobalClustering, num_classes: int) -> np.ndarray:
    """``(k, K)`` label counts this client contributes to each global cluster."""

    votes = np.zeros((global_map.k, num_classes), dtype=np.int64)
    np.add.at(votes, (global_map.global_assignments(local), client.dataset.labels), 1)
    return votes


def compute_cluster_labels(
    global_map: GlobalClustering,
    locals_: Sequence[LocalClustering],
    clients: Sequence[ClientDataset],
    num_classes: int,
) -> Tuple[List[Optional[int]], np.ndarray]:
    """Pool every client's votes per global cluster and take the mode.

    Returns the labels (``UNASSIGNED`` for clusters without members) and the
    pooled ``(k, K)`` vote table.
    """

    by_id = {client.client_id: client for client in clients}
    tallies = np.zeros((global_map.k, num_classes), dtype=np.int64)
    for local in locals_:
        tallies += client_votes(by_id[local.client_id], local, global_map, num_classes)
    labels: List[Optional[int]] = []
    for s, row in enumerate(tallies):
        if row.sum() == 0:
            LOGGER.warning("Global cluster %d received no samples; it removes nothing", s)
            labels.append(UNASSIGNED)
        else:
            labels.append(_vote(row))
    return labels, tallies


def sanitize_client(
    client: ClientDataset,
    local: LocalClustering,
    global_map: GlobalClustering,
    cluster_labels: Sequence[Optional[int]],
) -> Tuple[ClientSanitization, ClientDataset]:
    """Keep a sample iff its label matches the vote of its global cluster."""

    clusters = global_map.global_assignments(local)
    expected = np.array(
        [-1 if cluster_labels[s] is UNASSIGNED else cluster_labels[s] for s in clusters],
        dtype=np.int64,
    )
    unassigned = np.array([cluster_labels[s] is UNASSIGNED for s in clusters], dtype=bool)
    keep_mask = unassigned | (client.dataset.labels == expected)
    kept = np.flatnonzero(keep_mask)
    removed = np.flatnonzero(~keep_mask)
    LOGGER.info("Client %d: removed %d of %d samples", client.client_id, removed.size, len(client))
    entry = ClientSanitization(client_id=client.client_id, kept_indices=kept, removed_indices=removed)
    return entry, client.subset(kept)


def resolve_local_k(client: ClientDataset, k: int, from_labels: bool) -> int:
    """Local cluster count for ``client``, clamped to its row count."""

    local_k = int(np.unique(client.dataset.labels).size) if from_labels else k
    if local_k > len(client):
        LOGGER.warning("Client %d: k=%d clamped to its %d samples", client.client_id, local_k, len(client))
        local_k = len(client)
    return max(local_k, 1)


def sanitize_federation(
    clients: Sequence[ClientDataset],
    extractor: FeatureExtractor,
    k: int,
    num_classes: int,
    seed: int,
    local_k: Optional[int] = None,
    local_k_from_labels: bool = False,
    restarts: int = 5,
    max_iters: int = 100,
    m_const: float = 4.0,
    workers: int = 1,
) -> Tuple[List[ClientDataset], SanitizationResult]:
    """Project, cluster locally, aggregate on the server, vote and filter.

    Empty clients are skipped and returned unchanged.
    """

    active = [client for client in clients if len(client) > 0]
    skipped = [client.client_id for client in clients if len(client) == 0]

    def cluster_one(client: ClientDataset) -> LocalClustering:
        features = extractor.extract(client)
        count = resolve_local_k(client, local_k if local_k is not None else k, local_k_from_labels)
        return local_kmeans(
            features,
            count,
            seed=seed + client.client_id,
            restarts=restarts,
            max_iters=max_iters,
            m_const=m_const,
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            locals_ = list(pool.map(cluster_one, active))
    else:
        locals_ = [cluster_one(client) for client in active]

    global_map = federated_aggregate(locals_, k, seed)
    labels, tallies = compute_cluster_labels(global_map, locals_, active, num_classes)

    entries: List[ClientSanitization] = []
    cleaned_by_id: Dict[int, ClientDataset] = {}
    for client, local in zip(active, locals_):
        entry, cleaned = sanitize_client(client, local, global_map, labels)
        entries.append(entry)
        cleaned_by_id[client.client_id] = cleaned
    result = SanitizationResult(clients=entries, cluster_labels=labels, tallies=tallies, skipped_clients=skipped)
    LOGGER.info("Sanitization removed %d samples across %d clients", result.removed_count, len(entries))
    return [cleaned_by_id.get(client.client_id, client) for client in clients], result


@dataclass(frozen=True)
class DefenseSettings:
    """Everything the sanitization defense needs, resolved for one run."""

    projection: ProjectionSpec
    k: int
    seed: int
    local_k: Optional[int] = None
    local_k_from_labels: bool = False
    restarts: int = 5
    max_iters: int = 100
    m_const: float = 4.0

    def run(
        self, clients: Sequence[ClientDataset], num_classes: int, workers: int = 1
    ) -> Tuple[List[ClientDataset], SanitizationResult]:
        return sanitize_federation(
            clients,
            ProjectionExtractor(self.projection),
            k=self.k,
            num_classes=num_classes,
            seed=self.seed,
            local_k=self.local_k,
            local_k_from_labels=self.local_k_from_labels,
            restarts=self.restarts,
            max_iters=self.max_iters,
            m_const=self.m_const,
            workers=workers,
        )


__all__ = [
    "UNASSIGNED",
    "ClientSanitization",
    "SanitizationResult",
    "cluster_mode_label",
    "client_votes",
    "compute_cluster_labels",
    "sanitize_client",
    "resolve_local_k",
    "sanitize_federation",
    "DefenseSettings",
]
