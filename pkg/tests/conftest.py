import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from advst import autodiff as ad

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def f64():
    with ad.default_dtype(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(acceptance_log.RESULTS):
            terminalreporter.write_line(acceptance_log.RESULTS[number])
