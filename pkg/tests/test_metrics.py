import math

import numpy as np
import pytest

from conftest import make_dataset
from fedsan.metrics import accuracy, attack_success_rate, evaluate, sanitization_quality


class _FixedPredictor:
    """Stands in for an MLP; returns canned predictions."""

    def __init__(self, predictions):
        self.predictions = np.asarray(predictions)

    def predict(self, x):
        assert len(x) == len(self.predictions)
        return self.predictions


def test_accuracy_counts_matches():
    data = make_dataset(np.zeros(4), [0, 1, 2, 1], num_classes=3)
    assert accuracy(_FixedPredictor([0, 1, 1, 1]), data) == pytest.approx(0.75)


def test_accuracy_rejects_empty_set():
    with pytest.raises(ValueError):
        accuracy(_FixedPredictor([]), make_dataset(np.zeros((0, 1)), np.zeros(0, dtype=int), num_classes=2))


def test_asr_counts_target_predictions():
    triggered = make_dataset(np.zeros(5), [0, 1, 0, 1, 0], num_classes=3)
    assert attack_success_rate(_FixedPredictor([2, 2, 0, 2, 1]), triggered, target=2) == pytest.approx(0.6)


def test_asr_rejects_target_class_samples():
    triggered = make_dataset(np.zeros(2), [0, 2], num_classes=3)
    with pytest.raises(ValueError):
        attack_success_rate(_FixedPredictor([2, 2]), triggered, target=2)


def test_evaluate_without_attack_sets_reports_nan():
    data = make_dataset(np.zeros(2), [0, 1])
    acc, asr, components = evaluate(_FixedPredictor([0, 1]), data, {})
    assert acc == 1.0
    assert math.isnan(asr)
    assert components == {}


def test_evaluate_averages_components():
    data = make_dataset(np.zeros(2), [0, 1], num_classes=3)
    model = _FixedPredictor([2, 0])
    acc, asr, components = evaluate(model, data, {"backdoor": (data, 2), "label_flip": (data, 0)})
    assert acc == 0.0
    assert components == {"backdoor": 0.5, "label_flip": 0.0}
    assert asr == pytest.approx(0.25)


def test_sanitization_perfect():
    flags = [np.array([False, True, True, False])]
    assert sanitization_quality([[1, 2]], flags) == (1.0, 1.0)


def test_sanitization_nothing_removed_nothing_poisoned():
    assert sanitization_quality([[]], [np.zeros(3, dtype=bool)]) == (1.0, 1.0)


def test_sanitization_nothing_removed_with_poison():
    assert sanitization_quality([[]], [np.array([True, False])]) == (1.0, 0.0)


def test_sanitization_partial_overlap():
    flags = [np.array([False, False, True, True, True])]
    precision, recall = sanitization_quality([[1, 2, 3]], flags)
    assert precision == pytest.approx(2 / 3)
    assert recall == pytest.approx(2 / 3)


def test_sanitization_pools_across_clients():
    flags = [np.array([True, False]), np.array([False, False, True])]
    precision, recall = sanitization_quality([np.array([0, 1]), np.array([2])], flags)
    assert precision == pytest.approx(2 / 3)
    assert recall == 1.0


def test_sanitization_rejects_out_of_range_index():
    with pytest.raises(ValueError):
        sanitization_quality([[5]], [np.zeros(3, dtype=bool)])


def test_sanitization_requires_aligned_inputs():
    with pytest.raises(ValueError):
        sanitization_quality([[0]], [])
