import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def record(request):
    """Collects one status line per acceptance criterion for the terminal summary."""
    return request.config.stash.setdefault(_LINES, []).append


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: s.split("criterion", 1)[1]):
            terminalreporter.write_line(line)
