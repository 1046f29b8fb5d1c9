import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def record_criterion(request):
    """Log a one-line PASS/FAIL verdict for an acceptance criterion."""
    lines = request.config.stash.setdefault(_LINES, [])

    def record(label: str, passed: bool, detail: str) -> bool:
        lines.append(f"{label}: {'PASS' if passed else 'FAIL'}  {detail}")
        print(lines[-1])
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
