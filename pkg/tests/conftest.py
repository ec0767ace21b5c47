"""Acceptance reporting: one PASS/FAIL line per ``@pytest.mark.criterion`` test."""

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    passed = call.excinfo is None
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if not passed and not detail:
        detail = call.excinfo.exconly().splitlines()[0][:160]
    previous = _RESULTS.get(number)
    ok = passed and (previous is None or previous[1])
    details = [d for d in (previous[2] if previous else "", detail) if d]
    _RESULTS[number] = (title, ok, "; ".join(details))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, ok, detail = _RESULTS[number]
        line = f"criterion {number} ({title}): {'PASS' if ok else 'FAIL'}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
