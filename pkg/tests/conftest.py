import os

import numpy as np
import pytest

from homoplate import effective

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")

# (number, title, passed, detail) of every acceptance check run in this session
ACCEPTANCE = []


@pytest.fixture(autouse=True)
def _no_env_cache(monkeypatch):
    # tests must not pick up tensors cached by earlier command line runs
    monkeypatch.delenv(effective.CACHE_ENV, raising=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def criterion():
    """Record one acceptance line; returns ``passed`` so callers can assert on it."""

    def record(number, title, passed, detail=""):
        passed = bool(passed)
        line = (number, title, passed, detail)
        ACCEPTANCE.append(line)
        print(_format(line))
        return passed

    return record


def _format(line):
    number, title, passed, detail = line
    return f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE, key=lambda item: item[0]):
        terminalreporter.write_line(_format(line))
