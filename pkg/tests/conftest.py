import numpy as np
import pytest

from radfed.data import ClientDataset, DatasetSchema, TabularDataset


@pytest.fixture
def ten_sample_dataset() -> TabularDataset:
    """10 samples, 5 per class, one numeric feature."""
    return TabularDataset(
        numeric=np.arange(10, dtype=float).reshape(10, 1),
        categorical=np.zeros((10, 0), dtype=np.int64),
        labels=np.array([0] * 5 + [1] * 5),
        schema=DatasetSchema(label="label", numeric=("f0",)),
        class_names=("0", "1"),
    )


def make_client(client_id, features, labels, n_classes=2) -> ClientDataset:
    features = np.asarray(features, dtype=float)
    if features.ndim == 1:
        features = features.reshape(-1, 1)
    return ClientDataset(
        client_id=client_id,
        features=features,
        labels=np.asarray(labels, dtype=np.int64),
        n_classes=n_classes,
        n_numeric=features.shape[1],
    )


@pytest.fixture
def disjoint_pair():
    """Two equal-size clients holding disjoint single classes."""
    a = make_client(0, [[0.0], [0.2], [0.4]], [0, 0, 0])
    b = make_client(1, [[1.0], [1.2], [1.4]], [1, 1, 1])
    return [a, b]
