import json
import warnings
from pathlib import Path

import numpy as np
import pytest

from pategen.cli import AnalysisConfig, load_study
from pategen.core import StudyData
from pategen.estimators import ExtremeWeightWarning

FIXTURES = Path(__file__).resolve().parent / "fixtures"


@pytest.fixture(autouse=True)
def _quiet_weights():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ExtremeWeightWarning)
        yield


@pytest.fixture(scope="session")
def small_config():
    return AnalysisConfig.load(FIXTURES / "small.json")


@pytest.fixture(scope="session")
def small_data(small_config):
    return load_study(small_config)


@pytest.fixture(scope="session")
def oracle():
    return json.loads((FIXTURES / "oracle_small.json").read_text())


def make_study(seed, n=80, m=120, N=20000, r=0.5, effect=1.0):
    """Random study with a continuous covariate ``a`` and a binary ``b``;
    the trial over-represents large ``a``."""
    rng = np.random.default_rng(seed)
    a_t = rng.normal(0.4, 1.0, n)
    b_t = (rng.random(n) < 0.6).astype(float)
    x = np.zeros(n, dtype=int)
    x[rng.permutation(n)[: n // 2]] = 1
    y = 1.0 + effect * x + 0.8 * a_t - 0.5 * b_t + 0.5 * x * a_t + rng.normal(0, 1, n)
    a_c = rng.normal(0.0, 1.0, m)
    b_c = (rng.random(m) < 0.4).astype(float)
    return StudyData.from_arrays(
        ("a", "b"), np.column_stack([a_t, b_t]), x, y, np.column_stack([a_c, b_c]), N, r
    )
