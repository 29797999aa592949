import os

import numpy as np
import pytest
from hypothesis import settings

from rfsl.geometry import build_perimeter_network

settings.register_profile("default", max_examples=60, deadline=None)
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def room20():
    """7 m x 7 m room, 20 perimeter nodes, all ordered pairs linked."""
    return build_perimeter_network(7.0, 7.0, n_nodes=20)


@pytest.fixture(scope="session")
def small_room():
    return build_perimeter_network(4.0, 4.0, n_nodes=8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def report():
    """Record the one-line outcome of an acceptance criterion."""

    def _record(number: int, passed: bool, detail: str) -> bool:
        _CRITERIA[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(_CRITERIA[number])
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
