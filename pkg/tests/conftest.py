import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA: list[str] = []


@pytest.fixture
def report_criterion():
    """Record one PASS/FAIL line per acceptance criterion.

    Call with ``(number, title, passed, detail)``; the line is printed in the
    terminal summary and the test fails if ``passed`` is false. ``passed=None``
    records a SKIP and skips the test.
    """

    def record(number, title, passed, detail=""):
        status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        _CRITERIA.append(f"[{status}] criterion {number}: {title}" + (f" ({detail})" if detail else ""))
        if passed is None:
            pytest.skip(detail)
        assert passed, f"criterion {number} failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
