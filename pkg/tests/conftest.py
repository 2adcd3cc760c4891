from __future__ import annotations

import os

import numpy as np
import pytest

from fedsim.config import SyntheticDataConfig
from fedsim.data import gen_synthetic


def pytest_collection_modifyitems(config, items):
    if os.environ.get("FEDSIM_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="lento: exportar FEDSIM_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def small_data_cfg() -> SyntheticDataConfig:
    return SyntheticDataConfig(
        classes=3, feature_dim=4, per_party=24, parties=4,
        public_size=30, test_size=90, cluster_sep=6.0,
    )


@pytest.fixture
def small_split(small_data_cfg):
    return gen_synthetic(small_data_cfg, seed=5)


def _tiny_flat_config(**overrides) -> dict:
    flat = {
        "master_seed": "3",
        "dataset.synthetic.classes": "3",
        "dataset.synthetic.feature_dim": "4",
        "dataset.synthetic.per_party": "20",
        "dataset.synthetic.parties": "4",
        "dataset.synthetic.public_size": "24",
        "dataset.synthetic.test_size": "60",
        "dataset.synthetic.cluster_sep": "6",
        "model.hidden_sizes": "8",
        "protocol.protocol": "fedavg",
        "protocol.aggregator": "mean",
        "protocol.rounds": "3",
        "protocol.t1": "2",
        "protocol.t2": "3",
        "protocol.lr_private": "0.1",
        "protocol.batch_size": "8",
    }
    flat.update(overrides)
    return flat


@pytest.fixture
def tiny_flat():
    """Configuración plana mínima para ejecuciones completas en segundos."""
    return _tiny_flat_config
