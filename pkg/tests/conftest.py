import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for oracles.py

from filter_triage.data import Dataset
from filter_triage.synthetic import generate_dataset
from filter_triage.zoo import Model, TrainConfig, architecture, build_model, train


@pytest.fixture(scope="session")
def synth_small() -> tuple[Dataset, Dataset]:
    """A small synthetic train/test pair shared across tests."""
    return generate_dataset(600, "train", seed=11), generate_dataset(200, "test", seed=11)


@pytest.fixture(scope="session")
def tiny_model(synth_small) -> Model:
    """A briefly-trained cifar10-small model (not accurate, just functional)."""
    train_set, test_set = synth_small
    model = build_model(architecture("cifar10-small", 10), seed=5)
    val = train_set.subset(np.arange(500, 600), "val")
    tr = train_set.subset(np.arange(500), "train")
    train(model, tr, val, TrainConfig(max_epochs=3, batch_size=64, patience=5, seed=5))
    return model
