import pytest

# criterion number -> (title, [outcomes of its tests])
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion a test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    entry = _CRITERIA.setdefault(n, (title, []))
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = "; ".join(v for k, v in rep.user_properties if k == "detail")
        entry[1].append((item.name, rep.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, outcomes = _CRITERIA[n]
        states = {o for _, o, _ in outcomes}
        if "failed" in states:
            verdict = "FAIL"
        elif states == {"skipped"}:
            verdict = "SKIP"
        else:
            verdict = "PASS"
        ran = sum(o != "skipped" for _, o, _ in outcomes)
        tr.write_line(f"criterion {n}: {verdict}  {title} ({ran}/{len(outcomes)} checks run)")
        for name, o, detail in outcomes:
            if o != "passed" or detail:
                tr.write_line(f"    {name}: {o}" + (f"  {detail}" if detail else ""))
