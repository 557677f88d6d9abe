import numpy as np
import pytest

from gmsfem.fields import channels_field, constant_field
from gmsfem.grid import build_grid


@pytest.fixture(scope="session")
def grid44():
    return build_grid(4, 4, 5)


@pytest.fixture(scope="session")
def channels44(grid44):
    return channels_field(grid44, 1e4, seed=7)


@pytest.fixture(scope="session")
def ones44(grid44):
    return constant_field(grid44, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def linear_x(x, y):
    return x


_ACCEPTANCE: dict = {}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def record(number: int, ok: bool, detail: str) -> bool:
        _ACCEPTANCE[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(_ACCEPTANCE[number])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
