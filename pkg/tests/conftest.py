import pytest

# (criterion number, title, status, detail) collected by the acceptance suite
ACCEPTANCE: list[tuple[int, str, str, str]] = []


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run long training campaigns")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="training campaign; pass --runslow to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:2d} [{status}] {title}: {detail}")
