import pytest

_LINES: list[str] = []


class AcceptanceLog:
    """Records one PASS/FAIL line per criterion; lines are echoed in the terminal summary."""

    def report(self, number: int, name: str, ok: bool, detail: str = "") -> bool:
        line = f"ACCEPTANCE {number:02d} {name}: {'PASS' if ok else 'FAIL'}"
        if detail:
            line += f" | {detail}"
        print(line)
        _LINES.append(line)
        return ok


@pytest.fixture
def acceptance():
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES):
            terminalreporter.write_line(line)
