import pytest

ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line; the test still asserts on ``ok``."""
    def record(num: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {num:2d} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        ACCEPTANCE_LINES[num] = line
        print(line)
        return ok
    return record
