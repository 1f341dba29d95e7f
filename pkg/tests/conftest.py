"""Collects acceptance outcomes and prints one line per criterion at the end."""

import pytest

CRITERIA = {
    1: "sparsity slopes",
    2: "simulation recovery",
    3: "held-out AUC against the equiprobable baseline",
    4: "normaliser bound",
    5: "coordinate-ascent monotonicity",
    6: "gradient fidelity",
    7: "exact enumeration",
    8: "complexity scaling",
    9: "metric unit suite",
}

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or rep.failed:
        details = [v for k, v in item.user_properties if k == "detail"]
        _results.setdefault(marker.args[0], []).append((item.name, rep.passed, details))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(CRITERIA):
        runs = _results.get(n)
        if not runs:
            tr.write_line(f"criterion {n} ({CRITERIA[n]}): NOT RUN")
            continue
        ok = all(passed for _, passed, _ in runs)
        notes = "; ".join(d for _, _, ds in runs for d in ds)
        line = f"criterion {n} ({CRITERIA[n]}): {'PASS' if ok else 'FAIL'}"
        tr.write_line(line + (f" [{notes}]" if notes else ""))
