import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_VERDICTS: dict[int, tuple[bool, str]] = {}


class Criterion:
    def __init__(self, number: int):
        self.number = number

    def report(self, ok: bool, detail: str) -> None:
        _VERDICTS[self.number] = (bool(ok), detail)
        print(f"criterion {self.number}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail


@pytest.fixture
def criterion(request):
    return Criterion(request.node.get_closest_marker("criterion").args[0])


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        ok, detail = _VERDICTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
