# tests/conftest.py

import os

import numpy as np
import pytest
import yaml

from src.common.settings import RunConfig
from src.data.synthetic import SyntheticSpec, generate_synthetic
from src.model.recommender import ModelConfig


@pytest.fixture
def planted_splits():
    """Small planted dataset: 5 fields, fields 0 and 1 decide the label, no label noise."""
    spec = SyntheticSpec(num_fields=5, informative_fields=[0, 1], cardinalities=6, label_noise=0.0, num_rows=1200, seed=3)
    return generate_synthetic(spec)


@pytest.fixture
def tiny_model_config():
    return ModelConfig(
        num_fields=3,
        field_cardinalities=(5, 4, 6),
        embedding_dim=2,
        hidden_sizes=(4, 3),
        dropout=0.2,
    )


def fast_settings(tmp_path, **sections) -> dict:
    """A run config that trains for seconds, not minutes."""
    raw = {
        "project": {"output_dir": str(tmp_path / "run"), "show_progress": False},
        "data": {"source": "synthetic"},
        "synthetic": {"num_fields": 5, "informative_fields": [0, 1], "cardinality": 6, "label_noise": 0.0, "num_rows": 1500},
        "model": {"embedding_dim": 4, "hidden_sizes": [8, 4], "dropout": 0.0, "learning_rate": 0.01},
        "controller": {"learning_rate": 0.02},
        "search": {"k": 2, "batch_size": 128, "max_epochs": 3, "patience": 2},
        "retrain": {"batch_size": 128, "max_epochs": 3, "patience": 2},
        "oracle": {"max_epochs": 2, "hidden_sizes": [4]},
        "logging": {"level": "WARNING"},
        "seed": 11,
    }
    for section, values in sections.items():
        if isinstance(values, dict):
            raw.setdefault(section, {}).update(values)
        else:
            raw[section] = values
    return raw


@pytest.fixture
def fast_config(tmp_path):
    return RunConfig.from_dict(fast_settings(tmp_path))


@pytest.fixture
def fast_config_file(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(fast_settings(tmp_path)), encoding="utf-8")
    return str(path)


@pytest.fixture(autouse=True)
def _no_log_level_env(monkeypatch):
    monkeypatch.delenv("LOG_LEVEL", raising=False)
    monkeypatch.delenv("AUTOFIELD_OUTPUT_DIR", raising=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def file_bytes(path) -> bytes:
    with open(os.fspath(path), "rb") as f:
        return f.read()
