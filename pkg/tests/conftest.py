import functools

import pytest
from hypothesis import HealthCheck, settings

from owl.synth import blob_experiment

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@functools.lru_cache(maxsize=None)
def blob_data(seed=0):
    """The 20 + 10 class benchmark used by the end-to-end tests (cached, treat as read-only)."""
    return blob_experiment(seed=seed)


@pytest.fixture(scope="session")
def blobs():
    return blob_data(0)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
