import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training experiments")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance report ------------------------------------------------------------
_CRITERIA: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion():
    """``criterion(name, passed, detail)`` records one acceptance line and returns ``passed``."""
    def record(name: str, passed: bool, detail: str) -> bool:
        passed = bool(passed)
        _CRITERIA.append((name, passed, detail))
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
