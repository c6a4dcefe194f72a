import math

import pytest

from natmhd.families import sol13 as make_sol13
from natmhd.families import sol14 as make_sol14
from natmhd.solution import GridSpec

TWO_PI = 2 * math.pi
BOX = ((0.0, 1.0), (0.0, TWO_PI), (0.0, TWO_PI), (0.5, 1.0))


def grid(n):
    return GridSpec.uniform(BOX, n)


@pytest.fixture(scope="session")
def sol13():
    return make_sol13()


@pytest.fixture(scope="session")
def sol14():
    return make_sol14()


@pytest.fixture(scope="session")
def small_grid():
    return grid(7)
