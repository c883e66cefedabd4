"""Collects the acceptance verdict lines and prints them in the terminal summary."""

VERDICTS: list[str] = []


def record(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
