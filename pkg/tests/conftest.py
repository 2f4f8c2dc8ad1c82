import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "depcag", deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("depcag")

BASE_SEED = int(os.environ.get("DEPCAG_SEED", "20240607"))


@pytest.fixture
def rng():
    return np.random.default_rng(BASE_SEED)
