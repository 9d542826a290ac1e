import re

import pytest

# criterion number -> (title, passed, detail), filled by test_acceptance.py
_criteria = {}
# criterion number -> pytest outcome, for tests that failed before recording
_outcomes = {}
N_CRITERIA = 12


def pytest_runtest_logreport(report):
    hit = re.search(r"test_criterion_(\d+)", report.nodeid)
    if hit and (report.when == "call" or report.failed):
        _outcomes.setdefault(int(hit.group(1)), report.outcome)


@pytest.fixture
def record_criterion():
    def record(num, title, passed, detail):
        _criteria[num] = (title, bool(passed), detail)
        print(f"[{num}] {title}: {'PASS' if passed else 'FAIL'} ({detail})")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _criteria and not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for num in range(1, N_CRITERIA + 1):
        if num in _criteria:
            title, passed, detail = _criteria[num]
            line = f"[{num:2d}] {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        elif num in _outcomes:
            line = f"[{num:2d}] FAIL  (test {_outcomes[num]} before reporting a result)"
        else:
            line = f"[{num:2d}] ----  not run in this session"
        terminalreporter.write_line(line)
