import os
from pathlib import Path

import numpy as np
import pytest

from fedsan.config import default_config
from fedsan.dataset import ClientDataset, Dataset


def make_dataset(features, labels, num_classes=None) -> Dataset:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features[:, None]
    labels = np.asarray(labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 1
    return Dataset(features=features, labels=labels, num_classes=num_classes, image_shape=(1, features.shape[1]))


def make_client(client_id, features, labels, num_classes=None, poison_flags=None) -> ClientDataset:
    return ClientDataset(
        client_id=client_id,
        dataset=make_dataset(features, labels, num_classes),
        poison_flags=poison_flags,
    )


@pytest.fixture
def tiny_config(tmp_path):
    cfg = default_config()
    cfg.dataset.synthetic.num_classes = 4
    cfg.dataset.synthetic.per_class = 30
    cfg.dataset.synthetic.dim = 8
    cfg.dataset.synthetic.test_per_class = 10
    cfg.partition.num_clients = 4
    cfg.training.rounds = 2
    cfg.training.hidden = 8
    cfg.training.batch_size = 16
    cfg.output_dir = str(tmp_path / "out")
    return cfg


@pytest.fixture
def mnist_dir() -> Path:
    location = os.environ.get("FEDSAN_MNIST_DIR")
    if not location:
        pytest.skip("FEDSAN_MNIST_DIR is not set")
    return Path(location)
