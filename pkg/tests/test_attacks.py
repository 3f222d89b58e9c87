import numpy as np
import pytest

from conftest import make_client, make_dataset
from fedsan.attacks import (
    AttackKind,
    AttackPlan,
    Backdoor,
    LabelFlip,
    TriggerSpec,
    adversarial_client_ids,
    apply_trigger,
    build_flip_testset,
    build_triggered_testset,
    poison_clients,
)


def _trigger(mask, pattern):
    return TriggerSpec(mask=np.asarray(mask, dtype=float), pattern=np.asarray(pattern, dtype=float))


def test_apply_trigger_zero_mask_is_identity():
    x = np.array([0.1, 0.7, 0.3])
    np.testing.assert_array_equal(apply_trigger(x, _trigger([0, 0, 0], [1, 1, 1])), x)


def test_apply_trigger_full_mask_is_pattern():
    x = np.array([0.1, 0.7])
    np.testing.assert_array_equal(apply_trigger(x, _trigger([1, 1], [0.9, 0.4])), [0.9, 0.4])


def test_apply_trigger_hand_example():
    np.testing.assert_allclose(apply_trigger(np.array([0.5, 0.5]), _trigger([0, 1], [1, 1])), [0.5, 1.0], atol=1e-9)


def test_apply_trigger_is_idempotent_and_pure():
    rng = np.random.default_rng(0)
    x = rng.random((4, 6))
    before = x.copy()
    trigger = _trigger(rng.integers(0, 2, 6), rng.random(6))
    once = apply_trigger(x, trigger)
    np.testing.assert_array_equal(apply_trigger(once, trigger), once)
    np.testing.assert_array_equal(x, before)


def test_apply_trigger_rejects_length_mismatch():
    with pytest.raises(ValueError):
        apply_trigger(np.zeros(3), _trigger([1, 0], [1, 1]))


def test_trigger_mask_must_be_binary():
    with pytest.raises(ValueError):
        _trigger([0.5, 1.0], [1.0, 1.0])


def test_rect_trigger_defaults_to_bottom_right_corner():
    trigger = TriggerSpec.rect((28, 28), -3, -3, 3, 3, 1.0)
    mask = trigger.mask.reshape(28, 28)
    assert mask.sum() == 9
    assert mask[25:, 25:].all()
    np.testing.assert_array_equal(trigger.pattern.reshape(28, 28)[25:, 25:], np.ones((3, 3)))


def test_rect_trigger_is_clipped_to_the_image():
    trigger = TriggerSpec.rect((1, 8), -3, -3, 3, 3, 1.0)
    np.testing.assert_array_equal(trigger.mask, [0, 0, 0, 0, 0, 1, 1, 1])


def test_rect_trigger_reaching_past_the_left_edge_is_clipped_not_shifted():
    trigger = TriggerSpec.rect((2, 8), 0, -10, 2, 4, 1.0)
    np.testing.assert_array_equal(trigger.mask.reshape(2, 8)[:, :2], np.ones((2, 2)))
    assert trigger.mask.sum() == 4


def test_rect_trigger_reaching_past_the_top_edge_is_clipped_not_shifted():
    trigger = TriggerSpec.rect((28, 28), -30, 0, 3, 1, 1.0)
    mask = trigger.mask.reshape(28, 28)
    assert mask.sum() == 1
    assert mask[0, 0] == 1


def test_rect_trigger_entirely_off_the_image_is_rejected():
    with pytest.raises(ValueError, match="misses"):
        TriggerSpec.rect((1, 16), 0, -20, 1, 3, 1.0)


def _flip_plan(ratio=1.0, fraction=1.0, seed=0):
    return AttackPlan(
        kind=AttackKind.LABEL_FLIP,
        poison_ratio=ratio,
        adversary_fraction=fraction,
        seed=seed,
        flip=LabelFlip(source=3, target=2),
    )


def test_zero_adversaries_returns_input_unchanged():
    clients = [make_client(i, np.arange(6.0), [3, 3, 1, 0, 2, 3], num_classes=4) for i in range(3)]
    out = poison_clients(clients, _flip_plan(fraction=0.0))
    for before, after in zip(clients, out):
        assert after is before
        assert not after.poison_flags.any()


def test_label_flip_relabels_every_source_sample():
    client = make_client(0, np.arange(7.0), [3, 1, 3, 3, 0, 3, 2], num_classes=4)
    (out,) = poison_clients([client], _flip_plan(ratio=1.0))
    np.testing.assert_array_equal(out.dataset.labels, [2, 1, 2, 2, 0, 2, 2])
    np.testing.assert_array_equal(out.poison_flags, [1, 0, 1, 1, 0, 1, 0])
    np.testing.assert_array_equal(out.dataset.features, client.dataset.features)


def test_backdoor_poisons_exactly_half_of_the_eligible_samples():
    rng = np.random.default_rng(4)
    features = rng.random((12, 4))
    labels = [1, 2, 1, 0, 2, 1, 3, 0, 1, 2, 3, 1]
    client = make_client(0, features, labels, num_classes=4)
    trigger = _trigger([0, 0, 1, 1], [0, 0, 1, 1])
    plan = AttackPlan(
        kind=AttackKind.BACKDOOR,
        poison_ratio=0.5,
        adversary_fraction=1.0,
        seed=1,
        backdoor=Backdoor(trigger=trigger, target=0),
    )
    (out,) = poison_clients([client], plan)
    flagged = out.poisoned_indices
    assert flagged.size == 5
    for i in flagged:
        assert labels[i] != 0
        assert out.dataset.labels[i] == 0
        np.testing.assert_array_equal(out.dataset.features[i], apply_trigger(features[i], trigger))
    untouched = np.setdiff1d(np.arange(12), flagged)
    np.testing.assert_array_equal(out.dataset.features[untouched], features[untouched])
    np.testing.assert_array_equal(out.dataset.labels[untouched], np.asarray(labels)[untouched])


def test_hybrid_uses_disjoint_subsets_flip_first():
    labels = [3] * 8 + [1] * 8
    client = make_client(0, np.zeros((16, 4)), labels, num_classes=4)
    plan = AttackPlan(
        kind=AttackKind.HYBRID,
        poison_ratio=1.0,
        adversary_fraction=1.0,
        seed=2,
        flip=LabelFlip(3, 2),
        backdoor=Backdoor(trigger=_trigger([1, 0, 0, 0], [1, 0, 0, 0]), target=0),
        hybrid_flip_share=0.5,
    )
    (out,) = poison_clients([client], plan)
    flipped = np.flatnonzero(out.dataset.labels == 2)
    backdoored = np.flatnonzero(out.dataset.labels == 0)
    assert flipped.size == 4
    # eligible for the backdoor: 4 untouched '3's plus 8 '1's
    assert backdoored.size == 6
    assert np.intersect1d(flipped, backdoored).size == 0
    assert out.poison_flags.sum() == 10


def test_adversary_without_eligible_samples_is_reported(caplog):
    client = make_client(0, np.arange(3.0), [0, 1, 1], num_classes=4)
    (out,) = poison_clients([client], _flip_plan())
    assert not out.poison_flags.any()
    assert "no samples of class 3" in caplog.text


def test_adversarial_ids_are_seeded_and_sized():
    plan = _flip_plan(fraction=0.25, seed=7)
    ids = adversarial_client_ids(10, plan)
    assert len(ids) == 3
    assert ids == sorted(ids)
    assert ids == adversarial_client_ids(10, plan)


def test_plan_rejects_invalid_settings():
    with pytest.raises(ValueError):
        _flip_plan(ratio=0.0)
    with pytest.raises(ValueError):
        AttackPlan(kind="label_flip", poison_ratio=0.5, adversary_fraction=0.5, flip=LabelFlip(2, 2))
    with pytest.raises(ValueError):
        AttackPlan(kind="backdoor", poison_ratio=0.5, adversary_fraction=0.5)


def test_plan_class_ids_must_exist():
    client = make_client(0, np.arange(3.0), [0, 1, 1], num_classes=3)
    with pytest.raises(ValueError):
        poison_clients([client], _flip_plan())


def test_triggered_testset_drops_target_class():
    labels = np.repeat(np.arange(10), 10)
    test = make_dataset(np.zeros((100, 4)), labels)
    triggered = build_triggered_testset(test, _trigger([1, 1, 0, 0], [1, 1, 0, 0]), target=0)
    assert len(triggered) == 90
    assert not np.any(triggered.labels == 0)
    np.testing.assert_array_equal(triggered.features[:, :2], np.ones((90, 2)))


def test_triggered_testset_with_empty_mask_equals_originals():
    test = make_dataset(np.arange(8.0).reshape(4, 2), [0, 1, 2, 1])
    triggered = build_triggered_testset(test, _trigger([0, 0], [1, 1]), target=1)
    np.testing.assert_array_equal(triggered.features, [[0.0, 1.0], [4.0, 5.0]])
    np.testing.assert_array_equal(triggered.labels, [0, 2])


def test_triggered_single_sample_full_mask_equals_pattern():
    test = make_dataset([[0.3, 0.6]], [1], num_classes=2)
    triggered = build_triggered_testset(test, _trigger([1, 1], [0.2, 0.9]), target=0)
    np.testing.assert_array_equal(triggered.features, [[0.2, 0.9]])


def test_triggered_testset_rejects_all_target():
    test = make_dataset(np.zeros((3, 2)), [1, 1, 1], num_classes=2)
    with pytest.raises(ValueError):
        build_triggered_testset(test, _trigger([1, 0], [1, 0]), target=1)


def test_flip_testset_keeps_clean_source_samples():
    test = make_dataset(np.arange(5.0), [3, 1, 3, 2, 0], num_classes=4)
    flip = build_flip_testset(test, source=3)
    np.testing.assert_array_equal(flip.features[:, 0], [0.0, 2.0])
    np.testing.assert_array_equal(flip.labels, [3, 3])
