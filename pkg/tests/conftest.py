import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


_VERDICTS: dict = {}


@pytest.fixture
def criterion():
    """Record a PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, checks):
        ok = all(passed for _, passed in checks)
        detail = "; ".join(f"{text} [{'ok' if passed else 'FAIL'}]" for text, passed in checks)
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        _VERDICTS[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[n])
