import os

import pytest
from hypothesis import HealthCheck, settings

from zoo import small_models

settings.register_profile(
    "myis", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("myis")


@pytest.fixture(scope="session")
def models():
    return small_models()


def pytest_collection_modifyitems(config, items):
    if os.environ.get("MYIS_RUN_OPTIONAL") == "1":
        return
    skip = pytest.mark.skip(reason="set MYIS_RUN_OPTIONAL=1 to run")
    for item in items:
        if "optional" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in RESULTS:
        terminalreporter.write_line(line)
