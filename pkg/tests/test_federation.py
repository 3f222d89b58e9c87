import math

import numpy as np
import pytest

from conftest import make_client
from fedsan.dataset import PartitionSpec, generate_synthetic, partition
from fedsan.features import ProjectionSpec
from fedsan.fltrain.federation import (
    AGGREGATORS,
    EvaluationSets,
    TrainConfig,
    build_aggregator,
    clients_per_round,
    local_train,
    run_federation,
    select_clients,
)
from fedsan.fltrain.model import MLPLayout, init_mlp, mean_loss
from fedsan.sanitize import DefenseSettings


def _federation(num_clients=6, seed=0, spread=0.5, center_gap=3.0):
    train = generate_synthetic(k=4, per_class=60, dim=8, spread=spread, center_gap=center_gap, seed=seed)
    test = generate_synthetic(k=4, per_class=20, dim=8, spread=spread, center_gap=center_gap, seed=[seed, 1])
    return partition(train, PartitionSpec(num_clients=num_clients, seed=seed)), EvaluationSets(test=test)


def _config(**overrides):
    cfg = TrainConfig(rounds=3, participation=1.0, batch_size=16, local_lr=0.1, hidden=8)
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


def test_full_participation_selects_everyone():
    assert select_clients(10, 1.0, round_index=3, seed=0) == list(range(10))


def test_partial_participation_count():
    selected = select_clients(10, 0.8, round_index=1, seed=5)
    assert len(selected) == 8
    assert len(set(selected)) == 8
    assert all(0 <= cid < 10 for cid in selected)


def test_selection_is_deterministic():
    assert select_clients(20, 0.3, 4, 9) == select_clients(20, 0.3, 4, 9)


def test_selection_always_picks_at_least_one():
    assert clients_per_round(3, 0.1) == 1
    assert len(select_clients(3, 0.1, 1, 0)) == 1


def test_selection_rejects_bad_participation():
    with pytest.raises(ValueError):
        select_clients(10, 0.0, 1, 0)


def test_zero_learning_rate_returns_the_global_model():
    clients, _ = _federation()
    model = init_mlp(MLPLayout(8, 8, 4), seed=1)
    local = local_train(model, clients[0], _config(local_lr=0.0), seed=0)
    np.testing.assert_array_equal(local.params, model.params)
    assert local is not model


def test_local_training_loss_never_rises_across_epochs():
    clients, _ = _federation()
    client = clients[0]
    x, y = client.dataset.features, client.dataset.labels
    cfg = _config(local_epochs=1, batch_size=len(client), local_lr=0.05)
    model = init_mlp(MLPLayout(8, 8, 4), seed=1)
    trace = [mean_loss(model, x, y)]
    for epoch in range(8):
        model = local_train(model, client, cfg, seed=epoch)
        trace.append(mean_loss(model, x, y))
    assert all(later <= earlier + 1e-9 for earlier, later in zip(trace, trace[1:]))
    assert trace[-1] < trace[0]


def test_local_training_does_not_touch_the_global_model():
    clients, _ = _federation()
    model = init_mlp(MLPLayout(8, 8, 4), seed=1)
    snapshot = model.params.copy()
    local_train(model, clients[1], _config(), seed=0)
    np.testing.assert_array_equal(model.params, snapshot)


def test_empty_client_is_unchanged():
    model = init_mlp(MLPLayout(8, 8, 4), seed=1)
    empty = make_client(0, np.zeros((0, 8)), np.zeros(0, dtype=int), num_classes=4)
    np.testing.assert_array_equal(local_train(model, empty, _config(), seed=0).params, model.params)


def test_zero_rounds_yields_one_row():
    clients, evaluation = _federation()
    history = run_federation(clients, evaluation, _config(rounds=0), seed=0)
    assert len(history.rows) == 1
    assert history.rows[0].round == 0
    assert math.isnan(history.rows[0].asr)
    assert history.rows[0].wall_ms == 0.0


def test_training_learns_separable_blobs():
    clients, evaluation = _federation()
    history = run_federation(clients, evaluation, _config(rounds=10), seed=0)
    assert [row.round for row in history.rows] == list(range(11))
    assert history.final.accuracy >= 0.8


def test_runs_are_deterministic():
    clients, evaluation = _federation()
    cfg = _config(participation=0.5)
    a = run_federation(clients, evaluation, cfg, seed=3)
    b = run_federation(clients, evaluation, cfg, seed=3)
    np.testing.assert_array_equal(a.model.params, b.model.params)
    assert [r.accuracy for r in a.rows] == [r.accuracy for r in b.rows]
    assert [r.selected for r in a.rows] == [r.selected for r in b.rows]


def test_parallel_clients_match_sequential():
    clients, evaluation = _federation()
    cfg = _config()
    sequential = run_federation(clients, evaluation, cfg, seed=2, workers=1)
    parallel = run_federation(clients, evaluation, cfg, seed=2, workers=3)
    np.testing.assert_array_equal(sequential.model.params, parallel.model.params)


def test_defense_without_adversaries_costs_no_accuracy():
    clients, evaluation = _federation(spread=0.1, center_gap=5.0)
    cfg = _config(rounds=5)
    plain = run_federation(clients, evaluation, cfg, seed=0)
    defense = DefenseSettings(projection=ProjectionSpec(kind="identity", in_dim=8), k=4, seed=0)
    defended = run_federation(clients, evaluation, cfg, seed=0, defense=defense)
    assert defended.sanitization is not None
    assert abs(defended.final.accuracy - plain.final.accuracy) <= 0.01


@pytest.mark.parametrize("aggregator", AGGREGATORS)
def test_every_aggregator_runs(aggregator):
    clients, evaluation = _federation()
    history = run_federation(clients, evaluation, _config(aggregator=aggregator, krum_f=1), seed=0)
    assert len(history.rows) == 4
    assert all(0.0 <= row.accuracy <= 1.0 for row in history.rows)
    assert build_aggregator(_config(aggregator=aggregator), 6).name == aggregator


def test_dimension_mismatch_is_rejected():
    clients, _ = _federation()
    other = generate_synthetic(k=4, per_class=5, dim=3, spread=0.5, center_gap=3.0, seed=0)
    with pytest.raises(ValueError):
        run_federation(clients, EvaluationSets(test=other), _config(), seed=0)


def test_default_train_config_is_valid():
    assert TrainConfig().violations(num_clients=10) == []


def test_krum_needs_enough_clients_per_round():
    problems = TrainConfig(aggregator="krum", krum_f=2, participation=0.8).violations(num_clients=5)
    assert any("krum_f=2" in p for p in problems)


@pytest.mark.parametrize(
    "field, value, fragment",
    [
        ("participation", 1.5, "training.participation"),
        ("rounds", -1, "training.rounds"),
        ("aggregator", "mean", "training.aggregator"),
        ("trim_fraction", 0.5, "training.trim_fraction"),
        ("server_lr", 0.0, "training.server_lr"),
    ],
)
def test_train_config_violations_name_the_field(field, value, fragment):
    cfg = TrainConfig()
    setattr(cfg, field, value)
    assert any(fragment in p for p in cfg.violations(num_clients=10))
