import sys
import time
from contextlib import contextmanager
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA = []


class _Record:
    def __init__(self, number, title, budget):
        self.number, self.title, self.budget = number, title, budget
        self.details = []

    def note(self, text):
        self.details.append(text)


@contextmanager
def _criterion(number, title, budget=None):
    rec = _Record(number, title, budget)
    start = time.perf_counter()
    status = "FAIL"
    try:
        yield rec
        elapsed = time.perf_counter() - start
        rec.note(f"{elapsed:.1f}s")
        if budget is not None:
            assert elapsed < budget, f"runtime {elapsed:.1f}s exceeds {budget}s"
        status = "PASS"
    finally:
        line = f"criterion {number:>2} {status}  {title}"
        if rec.details:
            line += "  [" + "; ".join(rec.details) + "]"
        _CRITERIA.append((number, line))
        print(line)


@pytest.fixture
def criterion():
    """Context manager recording a PASS/FAIL line for an acceptance criterion."""
    return _criterion


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_CRITERIA):
        terminalreporter.write_line(line)
