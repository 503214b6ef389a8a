import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from coattn.numerics import kernels  # noqa: E402

BACKENDS = [m.NAME for m in kernels.available_backends()]
_LINES = pytest.StashKey[dict]()


@pytest.fixture(params=BACKENDS)
def backend(request):
    previous = kernels.backend.NAME
    mod = kernels.use(request.param)
    yield mod
    kernels.use(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion(request):
    """Record one acceptance line: PASS, FAIL (on exception) or a status set by the test."""
    lines = request.config.stash.setdefault(_LINES, {})

    @contextmanager
    def record(number: int, title: str):
        report = {"status": "PASS", "info": ""}
        try:
            yield report
        except BaseException:
            lines[number] = f"FAIL  [{number}] {title} {report['info']}".rstrip()
            print(lines[number])
            raise
        lines[number] = f"{report['status']:<5} [{number}] {title} {report['info']}".rstrip()
        print(lines[number])

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(lines):
        terminalreporter.write_line(lines[number])
