import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from msdnet.data import generate_mixture_dataset, split_dataset
from msdnet.graph import NetworkConfig, build
from msdnet.trainer import TrainConfig, train


@pytest.fixture(scope="session")
def mini_splits():
    ds = generate_mixture_dataset(700, image_size=16, hard_fraction=0.4, seed=77)
    return split_dataset(ds, 400, 150, 150)


@pytest.fixture(scope="session")
def mini_config():
    return NetworkConfig(
        num_scales=2,
        num_layers=6,
        growth_rates=(2, 4),
        num_classes=2,
        input_shape=(1, 16, 16),
        classifier_placement="budgeted",
        reduction=True,
        classifier_channels=8,
    )


@pytest.fixture(scope="session")
def mini_trained(mini_config, mini_splits):
    """A small trained network shared by harness and CLI tests."""
    train_set, val_set, _ = mini_splits
    graph = build(mini_config, seed=0)
    cfg = TrainConfig(epochs=6, batch_size=64, lr=0.1, lr_drop_epochs=(4,), seed=0)
    train(graph, train_set, cfg, val_set=val_set)
    return graph
