import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

_verdicts = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_verdicts] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_verdicts, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def verdict(request):
    """``verdict(n, ok, detail)`` records one PASS/FAIL line for criterion ``n`` and asserts ``ok``."""

    def record(n: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        print(line)
        request.config.stash[_verdicts].append(line)
        assert ok, line

    return record
