import copy
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from config import DEFAULT_CONFIG, build_scenario  # noqa: E402
from radio import SnrTrace  # noqa: E402


@pytest.fixture
def small_config():
    """Resolved configuration small enough for full runs in unit tests."""
    config = copy.deepcopy(DEFAULT_CONFIG)
    config.update({
        "num_clients": 6,
        "num_servers": 2,
        "num_slots": 60,
        "ladder": [1.0, 2.0, 3.0],
        "cache_size": 60.0,
        "buffer_cap": 10.0,
        "arrival_interval": 10.0,
        "videos": [
            {"id": 1, "duration": 40, "popularity": 0.7, "min_watch": 10, "retention_curve": "LINEAR"},
            {"id": 2, "duration": 40, "popularity": 0.3, "min_watch": 10, "retention_curve": "RC3"},
        ],
    })
    return config


@pytest.fixture
def make_scenario(small_config):
    def _make(**overrides):
        config = copy.deepcopy(small_config)
        config.update(overrides)
        return build_scenario(config)
    return _make


@pytest.fixture
def flat_trace():
    """Factory for a trace with the same SNR everywhere."""
    def _make(clients, servers, slots, snr_db=30.0):
        return SnrTrace(np.full((clients, servers, slots), snr_db, dtype=float))
    return _make
