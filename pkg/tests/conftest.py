import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from aronsson_lab.grid import Grid2D

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def unit_grid():
    return Grid2D.from_box(0.0, 1.0, 0.0, 1.0, 17)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    for mod in list(sys.modules.values()):
        results = getattr(mod, "ACCEPTANCE_RESULTS", None)
        if isinstance(results, dict) and results:
            terminalreporter.section("acceptance criteria")
            for k in sorted(results):
                terminalreporter.write_line(results[k])
            break
