from __future__ import annotations

ACCEPTANCE_LINES: dict[int, str] = {}


def report(number: int, passed: bool, detail: str) -> None:
    """Record one acceptance line; printed in the terminal summary."""
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
