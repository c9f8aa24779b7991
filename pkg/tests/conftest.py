import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA: list[str] = []


@pytest.fixture
def record_criterion():
    """Store one PASS/FAIL line; all lines are printed at the end of the run."""

    def record(number: int, title: str, passed: bool, detail: str) -> None:
        _CRITERIA.append(f"criterion {number} {title}: {'PASS' if passed else 'FAIL'} ({detail})")
        print(_CRITERIA[-1])

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
