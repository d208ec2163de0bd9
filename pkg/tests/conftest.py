import warnings

import numpy as np
import pytest

from hyperbolax.functions import CoverageWarning


@pytest.fixture(autouse=True)
def _quiet_coverage():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CoverageWarning)
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
