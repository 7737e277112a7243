from __future__ import annotations

import pytest

# criterion number -> {"budget": seconds, "outcomes": [...], "details": [...], "elapsed": seconds}
_CRITERIA: dict[int, dict] = {}


def _entry(item) -> dict | None:
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return None
    n, budget = mark.args
    return _CRITERIA.setdefault(n, {"budget": budget, "outcomes": [], "details": [], "elapsed": 0.0})


@pytest.fixture
def criterion_log(request):
    """Attach detail text and attributable runtime to the current criterion."""
    entry = _entry(request.node)

    def log(detail: str | None = None, elapsed: float = 0.0) -> None:
        if detail:
            entry["details"].append(detail)
        entry["elapsed"] += elapsed

    return log


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    entry = _entry(item)
    if entry is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        entry["outcomes"].append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        within = e["elapsed"] <= e["budget"]
        ok = bool(e["outcomes"]) and all(e["outcomes"]) and within
        line = f"{'PASS' if ok else 'FAIL'}  criterion {n:2d}  runtime {e['elapsed']:.2f} s (budget {e['budget']:.0f} s)"
        if e["details"]:
            line += "  " + "; ".join(e["details"])
        terminalreporter.write_line(line)
