import sys
from pathlib import Path

import pytest

# sibling helper modules (oracles, shared fixtures) import by plain name
sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """record(n, ok, detail) prints and keeps one pass/fail line per criterion."""
    def record(n, ok: bool, detail: str = "") -> bool:
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        print(line)
        _CRITERIA.append(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
