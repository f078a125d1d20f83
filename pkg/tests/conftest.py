from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "fixtures"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def fixture_dir():
    return FIXTURES
