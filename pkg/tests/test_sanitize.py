import numpy as np
import pytest

from conftest import make_client
from fedsan.attacks import AttackPlan, LabelFlip, poison_clients
from fedsan.clustering import GlobalClustering, LocalClustering
from fedsan.dataset import PartitionSpec, generate_synthetic, partition
from fedsan.features import ProjectionExtractor, ProjectionSpec
from fedsan.metrics import sanitization_quality
from fedsan.sanitize import (
    UNASSIGNED,
    DefenseSettings,
    cluster_mode_label,
    compute_cluster_labels,
    resolve_local_k,
    sanitize_client,
    sanitize_federation,
)


def _one_cluster(client_id, n):
    return LocalClustering(
        client_id=client_id,
        assignments=np.zeros(n, dtype=np.int64),
        centers=np.zeros((1, 1)),
        k=1,
        deltas=np.zeros(1),
        cost=0.0,
    )


@pytest.mark.parametrize(
    "labels, expected",
    [([2, 2, 3], 2), ([1, 1, 2, 2], 1), ([7] * 99 + [2], 7)],
)
def test_cluster_mode_label(labels, expected):
    assert cluster_mode_label(labels) == expected


def test_cluster_mode_label_rejects_empty():
    with pytest.raises(ValueError):
        cluster_mode_label([])


def test_sanitize_client_removes_disagreeing_member():
    client = make_client(0, np.arange(4.0), [2, 2, 3, 2], num_classes=4)
    local = _one_cluster(0, 4)
    global_map = GlobalClustering(global_centers=np.zeros((1, 1)), center_map={(0, 0): 0})
    entry, cleaned = sanitize_client(client, local, global_map, [2])
    np.testing.assert_array_equal(entry.removed_indices, [2])
    np.testing.assert_array_equal(entry.kept_indices, [0, 1, 3])
    np.testing.assert_array_equal(cleaned.dataset.features[:, 0], [0.0, 1.0, 3.0])
    np.testing.assert_array_equal(cleaned.dataset.labels, [2, 2, 2])


def test_sanitize_client_keeps_agreeing_samples():
    client = make_client(0, np.arange(3.0), [1, 1, 1], num_classes=2)
    global_map = GlobalClustering(global_centers=np.zeros((1, 1)), center_map={(0, 0): 0})
    entry, cleaned = sanitize_client(client, _one_cluster(0, 3), global_map, [1])
    assert entry.removed_indices.size == 0
    np.testing.assert_array_equal(cleaned.dataset.features, client.dataset.features)


def test_votes_are_pooled_across_clients():
    a = make_client(0, np.zeros(4), [2, 2, 2, 2], num_classes=3)
    b = make_client(1, np.zeros(6), [1] * 6, num_classes=3)
    global_map = GlobalClustering(global_centers=np.zeros((1, 1)), center_map={(0, 0): 0, (1, 0): 0})
    labels, tallies = compute_cluster_labels(global_map, [_one_cluster(0, 4), _one_cluster(1, 6)], [a, b], 3)
    assert labels == [1]
    np.testing.assert_array_equal(tallies, [[0, 6, 4]])
    entry, _ = sanitize_client(a, _one_cluster(0, 4), global_map, labels)
    assert entry.removed_indices.size == 4


def test_pooled_vote_tie_goes_to_smallest_class_like_cluster_mode_label():
    a = make_client(0, np.zeros(3), [2, 2, 2], num_classes=3)
    b = make_client(1, np.zeros(3), [1, 1, 1], num_classes=3)
    global_map = GlobalClustering(global_centers=np.zeros((1, 1)), center_map={(0, 0): 0, (1, 0): 0})
    labels, _ = compute_cluster_labels(global_map, [_one_cluster(0, 3), _one_cluster(1, 3)], [a, b], 3)
    assert labels == [cluster_mode_label([2, 2, 2, 1, 1, 1])] == [1]


def test_cluster_without_members_is_unassigned(caplog):
    client = make_client(0, np.zeros(3), [0, 1, 0], num_classes=2)
    global_map = GlobalClustering(global_centers=np.zeros((2, 1)), center_map={(0, 0): 0})
    labels, _ = compute_cluster_labels(global_map, [_one_cluster(0, 3)], [client], 2)
    assert labels == [0, UNASSIGNED]
    assert "received no samples" in caplog.text


def test_poison_minority_never_changes_the_vote():
    clean = [3] * 10
    for poisoned in range(10):
        assert cluster_mode_label(clean + [2] * poisoned) == 3


def test_resolve_local_k_clamps_and_counts_labels(caplog):
    client = make_client(2, np.zeros(3), [0, 1, 1], num_classes=4)
    assert resolve_local_k(client, 5, from_labels=False) == 3
    assert "clamped" in caplog.text
    assert resolve_local_k(client, 5, from_labels=True) == 2


def _blob_clients(seed, num_clients=10):
    ds = generate_synthetic(k=4, per_class=100, dim=16, spread=0.1, center_gap=10.0, seed=seed)
    return partition(ds, PartitionSpec(num_clients=num_clients, seed=seed))


def test_clean_label_pure_federation_removes_nothing():
    clients = _blob_clients(0)
    cleaned, result = sanitize_federation(
        clients, ProjectionExtractor(ProjectionSpec(kind="identity", in_dim=16)), k=4, num_classes=4, seed=0
    )
    assert result.removed_count == 0
    for before, after in zip(clients, cleaned):
        np.testing.assert_array_equal(after.dataset.features, before.dataset.features)


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_label_flip_is_removed_on_separable_blobs(seed):
    plan = AttackPlan(
        kind="label_flip", poison_ratio=0.3, adversary_fraction=0.5, seed=seed, flip=LabelFlip(3, 2)
    )
    poisoned = poison_clients(_blob_clients(seed), plan)
    defense = DefenseSettings(projection=ProjectionSpec(kind="identity", in_dim=16), k=4, seed=seed)
    cleaned, result = defense.run(poisoned, num_classes=4)
    removed = result.removed_by_client()
    precision, recall = sanitization_quality(
        [removed[c.client_id] for c in poisoned], [c.poison_flags for c in poisoned]
    )
    assert recall >= 0.95
    assert precision >= 0.90
    assert sum(len(c) for c in cleaned) == sum(len(c) for c in poisoned) - result.removed_count


def test_sanitization_only_removes_samples():
    plan = AttackPlan(kind="label_flip", poison_ratio=0.5, adversary_fraction=0.5, seed=1, flip=LabelFlip(3, 2))
    poisoned = poison_clients(_blob_clients(1), plan)
    cleaned, result = DefenseSettings(
        projection=ProjectionSpec(kind="random_linear", in_dim=16, out_dim=8, seed=2), k=4, seed=1
    ).run(poisoned, num_classes=4, workers=3)
    for before, after, entry in zip(poisoned, cleaned, result.clients):
        assert entry.kept_indices.size + entry.removed_indices.size == len(before)
        assert np.intersect1d(entry.kept_indices, entry.removed_indices).size == 0
        np.testing.assert_array_equal(after.dataset.features, before.dataset.features[entry.kept_indices])
        np.testing.assert_array_equal(after.dataset.labels, before.dataset.labels[entry.kept_indices])
        np.testing.assert_array_equal(after.source_indices, before.source_indices[entry.kept_indices])


def test_parallel_clustering_matches_sequential():
    clients = _blob_clients(3)
    settings = DefenseSettings(projection=ProjectionSpec(kind="identity", in_dim=16), k=4, seed=3)
    _, sequential = settings.run(clients, 4, workers=1)
    _, parallel = settings.run(clients, 4, workers=4)
    assert sequential.to_dict() == parallel.to_dict()


def test_empty_clients_are_skipped():
    clients = _blob_clients(0, num_clients=3)
    empty = make_client(3, np.zeros((0, 16)), np.zeros(0, dtype=int), num_classes=4)
    cleaned, result = sanitize_federation(
        clients + [empty], ProjectionExtractor(ProjectionSpec(kind="identity", in_dim=16)), k=4, num_classes=4, seed=0
    )
    assert result.skipped_clients == [3]
    assert cleaned[3] is empty
    assert result.to_dict()["skipped_clients"] == [3]
