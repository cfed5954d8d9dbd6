import pytest

_REPORT = []


@pytest.fixture(scope="session")
def criterion_report(pytestconfig):
    """Record one pass/fail line per acceptance criterion and echo it live."""
    reporter = pytestconfig.pluginmanager.get_plugin("terminalreporter")

    def record(number, passed, detail):
        verdict = "SKIP" if passed is None else "PASS" if passed else "FAIL"
        line = f"criterion {number:>2}: {verdict}  {detail}"
        _REPORT.append(line)
        if reporter is not None:
            reporter.write_line(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_REPORT, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
