import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("lab", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("lab")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import summary_lines
    except ImportError:
        return
    lines = summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for ln in lines:
            terminalreporter.write_line(ln)
