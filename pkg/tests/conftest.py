"""Pytest configuration and shared fixtures."""

import os
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from dotenv import load_dotenv

from src.series.types import TrafficSeries

load_dotenv()


def pytest_configure(config):
    """Register custom markers."""
    config.addinivalue_line("markers", "slow: statistical or end-to-end tests that take > 5 seconds")
    config.addinivalue_line("markers", "integration: end-to-end pipeline tests")


def pytest_collection_modifyitems(config, items):
    """Skip slow tests when FEGP_SKIP_SLOW is set."""
    if not os.environ.get("FEGP_SKIP_SLOW"):
        return
    skip_slow = pytest.mark.skip(reason="FEGP_SKIP_SLOW is set")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


START = datetime(2024, 1, 1, tzinfo=timezone.utc)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def make_series():
    """Build a TrafficSeries of 15-minute slots from raw values."""

    def _make(values, slot_minutes=15):
        return TrafficSeries(START, np.asarray(values, dtype=float), timedelta(minutes=slot_minutes))

    return _make
