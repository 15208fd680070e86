from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from ouhardy.core import Grid, ProblemConfig, s1_config

ROOT = Path(__file__).resolve().parent.parent
FROZEN = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())
S1_JSON = ROOT / "configs" / "s1.json"


@pytest.fixture(scope="session")
def frozen():
    return FROZEN


@pytest.fixture(scope="session")
def s1():
    return s1_config()


@pytest.fixture(scope="session")
def s1_grid48(s1):
    return Grid.for_config(s1, 48)


@pytest.fixture(scope="session")
def s1_grid64(s1):
    return Grid.for_config(s1, 64)


@pytest.fixture(scope="session")
def one_pole():
    return ProblemConfig.create([[0.0, 0.0, 0.0]], np.eye(3), 0.25)
