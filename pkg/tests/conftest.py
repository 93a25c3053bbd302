from collections import defaultdict

_criteria: dict = {}
_outcomes: dict = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("acceptance")
        if mark is not None:
            _criteria[item.nodeid] = mark.args


def pytest_runtest_logreport(report):
    if report.nodeid not in _criteria:
        return
    if report.when == "call" or report.outcome != "passed":
        details = [v for k, v in report.user_properties if k == "detail"]
        _outcomes[_criteria[report.nodeid]].append((report.outcome, details))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), results in sorted(_outcomes.items()):
        ok = all(outcome == "passed" for outcome, _ in results)
        details = "; ".join(d for _, ds in results for d in ds)
        line = f"AC{number:<2} {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(f"{line}  [{details}]" if details else line)
