"""Shared fixtures: tiny configs that train in well under a second per task."""

import json
import logging

import pytest

from exacfs.config import RunConfig, config_from_dict

TINY = {
    "dataset": {"kind": "blobs", "classes": 4, "dims": 6, "samples_per_class": 20, "separation": 5.0, "noise": 0.5},
    "network": {"stages": [[8, 1, 1]], "embed_dim": 6},
    "optimizer": {"epochs": 2, "batch_size": 16},
    "exemplars": {"budget": 3},
    "stream": {"base_classes": 2, "increment": 1},
    "finetune": {"epochs": 1},
    "seed": 3,
}


@pytest.fixture(autouse=True)
def _reset_package_logger():
    """CLI tests install a non-propagating handler; give caplog the logger back afterwards."""
    logger = logging.getLogger("exacfs")
    yield
    logger.handlers.clear()
    logger.propagate = True
    logger.setLevel(logging.NOTSET)


@pytest.fixture
def tiny_dict():
    return json.loads(json.dumps(TINY))


@pytest.fixture
def tiny_config(tiny_dict) -> RunConfig:
    return config_from_dict(tiny_dict)


@pytest.fixture
def config_file(tmp_path, tiny_dict):
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps(tiny_dict))
    return path
