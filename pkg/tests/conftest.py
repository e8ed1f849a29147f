import os
import sys
import time

import pytest
from hypothesis import HealthCheck, settings

import ppco

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def piston():
    ws = ppco.piston_workspace()
    yield ws
    ws.close()


def pytest_configure(config):
    config._ppco_started = time.monotonic()


def pytest_collection_modifyitems(config, items):
    # the wall-clock criterion measures everything else, so it runs last
    last = [i for i in items if i.name == "test_criterion_8_suite_wall_clock"]
    items[:] = [i for i in items if i not in last] + last


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is not None and module.REPORT:
        terminalreporter.section("acceptance criteria")
        for line in module.REPORT:
            terminalreporter.write_line(line)
