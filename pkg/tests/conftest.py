import sys

import pytest

from spare.codec import KeyMaterial
from spare.firewall import FirewallConfig

KEY = KeyMaterial(bytes(range(16)), bytes(range(100, 116)))

# 2024-03-09 00:00:00 UTC
DAY0 = 1709942400


@pytest.fixture
def key():
    return KEY


@pytest.fixture
def cfg():
    return FirewallConfig(key=KEY, time_window=3600, daily_threshold=30)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
