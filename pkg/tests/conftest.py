import pytest

_results: dict = {}


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m:
            _results.setdefault(m.args[0], {"text": m.args[1], "outcomes": []})


@pytest.fixture
def measured(request):
    """Attach measured values to the criterion's summary line."""
    m = request.node.get_closest_marker("criterion")

    def note(text):
        _results[m.args[0]].setdefault("notes", []).append(text)

    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m and (rep.when == "call" or rep.failed or rep.skipped):
        _results[m.args[0]]["outcomes"].append(rep.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        r = _results[n]
        if not r["outcomes"]:
            status = "NOT RUN"
        elif all(o == "passed" for o in r["outcomes"]):
            status = "PASS"
        else:
            status = "FAIL"
        notes = "; ".join(r.get("notes", []))
        terminalreporter.write_line(f"criterion {n:2d}: {status:7s} {r['text']}" + (f" [{notes}]" if notes else ""))
