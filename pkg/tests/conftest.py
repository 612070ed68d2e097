import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
