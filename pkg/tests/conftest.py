import os
import sys

import hypothesis
import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=20, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=200, deadline=None)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "fast"))


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow end-to-end tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end training runs taking minutes")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tone_corpus(tmp_path):
    """Three-class tone corpus with 30 clips per class."""
    from components.dataset import synthesize_tone_corpus

    root = tmp_path / "tones"
    keywords = synthesize_tone_corpus(root, num_classes=3, clips_per_class=30, seed=7)
    return root, keywords


SMALL_ARCHITECTURE = {
    "dynamic_filter": True,
    "filter_taps": 9,
    "idf_hidden": 8,
    "channels": 8,
    "blocks": 2,
    "expansion": 2,
    "kernel_size": 3,
    "stride_blocks": [1],
    "embedding": {"kernel_size": 3, "hidden": 8, "dim": 16, "stride": 2},
}


@pytest.fixture
def small_architecture():
    return dict(SMALL_ARCHITECTURE)
