import sys

import pytest

from hgmode.precision import get_precision


@pytest.fixture(params=[16, 30], ids=["D16", "D30"])
def prec(request):
    return get_precision(request.param)


def close(a, b, tol):
    """Relative-or-absolute closeness for float or mpf values."""
    return abs(a - b) <= tol * max(1, abs(b))


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run tests marked slow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="slow; pass --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
