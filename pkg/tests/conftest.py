import os

import pytest


def pytest_collection_modifyitems(config, items):
    # production-scale examples are opt-in; they take tens of minutes on one core
    if os.environ.get("KSAT_SLOW"):
        return
    skip = pytest.mark.skip(reason="set KSAT_SLOW=1 to run production-scale examples")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    report = getattr(mod, "REPORT", None)
    if not report:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(report):
        terminalreporter.write_line(report[key])
