import random
import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from slie.pattern import DEFAULT_LAYOUT, SlotLayout  # noqa: E402
from slie.wkdibe import setup  # noqa: E402

SMALL = SlotLayout(3, 0)
FAR = int(time.time()) + 30 * 86400


@pytest.fixture
def rng():
    return random.Random(0x511E)


@pytest.fixture(scope="session")
def small_system():
    return setup(SMALL, random.Random(3))


@pytest.fixture(scope="session")
def system():
    return setup(DEFAULT_LAYOUT, random.Random(17))
