import logging

import numpy as np
import pytest

from tvcorrnet.estimator import BandwidthSet, epanechnikov, fourth_order_epanechnikov
from tvcorrnet.panel import TimeSeriesPanel, difference

logging.getLogger("tvcorrnet.tuning").setLevel(logging.ERROR)


@pytest.fixture(scope="session")
def quartic():
    return fourth_order_epanechnikov()


@pytest.fixture(scope="session")
def epa():
    return epanechnikov()


@pytest.fixture()
def white_panel():
    """Small white-noise panel for fast estimator tests."""
    rng = np.random.default_rng(7)
    values = rng.standard_normal((60, 2))
    return TimeSeriesPanel(values, ["a", "b"])


@pytest.fixture()
def white_diffs(white_panel):
    return difference(white_panel, 3)


@pytest.fixture()
def small_bands():
    return BandwidthSet.uniform(0.3, 2)
