import pytest

_CRITERIA: dict[int, tuple[str, list[str], list[str]]] = {}
_LABELS = {
    "derived": "checked against an independent oracle",
    "paper": "checked against a statement of the method",
    "trivial": "asserted directly",
}
_COUNTS: dict[str, int] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")
    for name, meaning in _LABELS.items():
        config.addinivalue_line("markers", f"{name}: {meaning}")


def pytest_collection_modifyitems(items):
    for item in items:
        found = [m.name for m in item.iter_markers() if m.name in _LABELS]
        if len(found) != 1:
            raise pytest.UsageError(f"{item.nodeid}: needs exactly one of {sorted(_LABELS)}, has {found}")
        _COUNTS[found[0]] = _COUNTS.get(found[0], 0) + 1


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        n, title = mark.args
        _, outcomes, details = _CRITERIA.setdefault(n, (title, [], []))
        outcomes.append(report.outcome)
        details += [str(v) for k, v in item.user_properties if k == "measured"]


def pytest_terminal_summary(terminalreporter):
    if _COUNTS:
        terminalreporter.write_line(
            "test labels: " + ", ".join(f"{n} [{k.upper()}]" for k, n in sorted(_COUNTS.items())))
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, outcomes, details = _CRITERIA[n]
        ok = all(o == "passed" for o in outcomes)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {n}: {title}")
        for d in details:
            terminalreporter.write_line(f"        {d}")
