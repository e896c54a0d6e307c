import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture
def scenarios_dir():
    return ROOT / "scenarios"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
