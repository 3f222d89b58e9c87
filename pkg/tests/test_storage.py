import pytest

from fedsan.config import config_to_dict, default_config
from fedsan.storage import create_storage, recent_runs, record_run, round_metrics


def _summary(kind="none", accuracy=0.9, asr=None):
    cfg = default_config()
    cfg.attack.kind = kind
    cfg.output_dir = "runs/x"
    return {
        "config": config_to_dict(cfg),
        "config_hash": "abc123",
        "metrics": {
            "accuracy": accuracy,
            "attack_success_rate": asr,
            "sanitization_precision": None,
            "sanitization_recall": None,
            "removed_count": 0,
        },
    }


def _rows(n):
    return [{"round": r, "accuracy": 0.1 * r, "asr": None, "wall_ms": 0.0} for r in range(n)]


@pytest.fixture
def ledger(tmp_path):
    return create_storage(tmp_path / "nested" / "ledger.db")


def test_record_run_round_trip(ledger):
    run_id = record_run(ledger, _summary("backdoor", accuracy=0.75, asr=0.5), _rows(3))
    [record] = recent_runs(ledger)
    assert record.id == run_id
    assert record.attack_kind == "backdoor"
    assert record.defense is False
    assert record.aggregator == "fedavg"
    assert record.accuracy == 0.75
    assert record.asr == 0.5
    assert record.output_dir == "runs/x"
    assert record.summary["config_hash"] == "abc123"


def test_round_metrics_are_ordered(ledger):
    run_id = record_run(ledger, _summary(), list(reversed(_rows(4))))
    metrics = round_metrics(ledger, run_id)
    assert [m.round for m in metrics] == [0, 1, 2, 3]
    assert metrics[2].accuracy == pytest.approx(0.2)
    assert metrics[0].asr is None


def test_recent_runs_newest_first_and_limited(ledger):
    ids = [record_run(ledger, _summary(accuracy=0.1 * i), _rows(1)) for i in range(5)]
    records = recent_runs(ledger, limit=3)
    assert [r.id for r in records] == list(reversed(ids))[:3]


def test_recreate_drops_existing_rows(tmp_path):
    path = tmp_path / "ledger.db"
    record_run(create_storage(path), _summary(), _rows(1))
    assert recent_runs(create_storage(path)) != []
    assert recent_runs(create_storage(path, recreate=True)) == []
