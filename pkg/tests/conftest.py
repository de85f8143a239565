import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from degenlap.geometry import euclidean, heisenberg1


@pytest.fixture(scope="session")
def e1():
    return euclidean(1)


@pytest.fixture(scope="session")
def e2():
    return euclidean(2)


@pytest.fixture(scope="session")
def e3():
    return euclidean(3)


@pytest.fixture(scope="session")
def heis():
    return heisenberg1()
