"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import pytest

_OUTCOMES: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = dict(item.user_properties).get("detail", "")
        if rep.skipped:
            status = "SKIP"
            if isinstance(rep.longrepr, tuple):
                detail = rep.longrepr[2]
        else:
            status = "PASS" if rep.passed else "FAIL"
        _OUTCOMES[num] = (title, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_OUTCOMES):
        title, status, detail = _OUTCOMES[num]
        line = f"[{status}] criterion {num}: {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)
