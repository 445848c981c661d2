from __future__ import annotations

VERDICTS: dict[int, str] = {}


def record(criterion: int, ok: bool, detail: str) -> str:
    line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS[criterion] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[k])
