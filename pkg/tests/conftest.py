from __future__ import annotations

import re
from pathlib import Path

import pytest

_CRITERION_RE = re.compile(r"test_criterion_(\d+)")


@pytest.fixture
def data_dir() -> Path:
    return Path(__file__).parent / "data"


def pytest_terminal_summary(terminalreporter, exitstatus, config) -> None:
    """Print one PASS/FAIL line per acceptance criterion."""
    outcomes: dict[int, bool] = {}
    for status, passed in (("passed", True), ("failed", False), ("error", False)):
        for report in terminalreporter.stats.get(status, []):
            match = _CRITERION_RE.search(report.nodeid)
            if match:
                number = int(match.group(1))
                outcomes[number] = outcomes.get(number, True) and passed
    if not outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(outcomes):
        verdict = "PASS" if outcomes[number] else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {verdict}")
