import os

import numpy as np
import pytest

from models.config import default_config, override
from models.imaging import PhantomSpec

TINY_OVERRIDES = [
    ("data", "image_size", 32),
    ("data", "n_train_normal", 6),
    ("data", "n_test_normal", 3),
    ("data", "n_test_abnormal", 3),
    ("data", "lesion_radius_min", 3),
    ("data", "lesion_radius_max", 5),
    ("memory", "k", 8),
    ("memory", "d", 8),
    ("train", "epochs", 1),
    ("train", "batch_size", 4),
    ("train", "base_channels", 4),
    ("train", "n_downsamples", 3),
    ("train", "disc_layers", 2),
]


def pytest_collection_modifyitems(config, items):
    if os.getenv("PROXYAD_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set PROXYAD_RUN_SLOW=1 to run desk-scale experiments")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def single_worker(monkeypatch):
    monkeypatch.setenv("PROXYAD_THREADS", "1")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_spec():
    return PhantomSpec(
        image_size=32,
        n_train_normal=6,
        n_test_normal=3,
        n_test_abnormal=3,
        lesion_radius_range=(3.0, 5.0),
        lesion_contrast_range=(0.3, 0.4),
        noise_sigma=0.02,
        seed=0,
    )


def tiny(config, **values):
    """Apply TINY_OVERRIDES and then `section__key=value` extras"""
    for section, key, value in TINY_OVERRIDES:
        config = override(config, section, key, value)
    for name, value in values.items():
        section, key = name.split("__")
        config = override(config, section, key, value)
    return config


@pytest.fixture
def tiny_config(tmp_path):
    return tiny(default_config()).with_output(tmp_path / "run")


@pytest.fixture
def make_config(tmp_path):
    def _make(out="run", **values):
        return tiny(default_config(), **values).with_output(tmp_path / out)
    return _make
