import time

import numpy as np
import pytest

from shadowtorus.lyapunov import LyapPair, derive_parameter_chain
from shadowtorus.systems import make_cat_system

ACCEPTANCE_LINES = []
CHAIN_SECONDS = {}


def record_acceptance(n, passed, detail):
    line = f"ACCEPTANCE {n}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def linear():
    return make_cat_system("Linear", 0.0)


@pytest.fixture(scope="session")
def lewowicz():
    return make_cat_system("LewowiczSmooth", 0.05)


@pytest.fixture(scope="session")
def piecewise():
    return make_cat_system("PiecewiseHomeo", 0.05)


@pytest.fixture(scope="session")
def all_systems(linear, lewowicz, piecewise):
    return [linear, lewowicz, piecewise]


@pytest.fixture(scope="session")
def pair(linear):
    return LyapPair(linear.frame)


@pytest.fixture(scope="session")
def lewowicz_chain(lewowicz):
    t = time.perf_counter()
    chain = derive_parameter_chain(lewowicz, LyapPair(lewowicz.frame), 0.05)
    CHAIN_SECONDS["lewowicz"] = time.perf_counter() - t
    return chain


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
