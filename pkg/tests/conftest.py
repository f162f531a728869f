import sys
import time
from contextlib import contextmanager
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_RESULTS = []


class _Criterion:
    def __init__(self, cid, title):
        self.cid, self.title, self.detail = cid, title, ""


@contextmanager
def _record(cid, title):
    c = _Criterion(cid, title)
    t0 = time.perf_counter()
    status = "FAIL"
    try:
        yield c
        status = "PASS"
    except BaseException as e:
        if not c.detail:
            c.detail = str(e).splitlines()[0] if str(e) else type(e).__name__
        raise
    finally:
        line = f"[{status}] {c.cid} {c.title}: {c.detail} ({time.perf_counter() - t0:.1f} s)"
        _RESULTS.append(line)
        print(line)


@pytest.fixture
def criterion():
    """``with criterion("C1", "title") as c: ...; c.detail = "..."`` records one
    pass/fail line for the acceptance summary."""
    return _record


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in _RESULTS:
            terminalreporter.write_line(line)
