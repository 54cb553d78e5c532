import time
from contextlib import contextmanager

import pytest

ACCEPTANCE_LINES: list[str] = []


@contextmanager
def _criterion(number: int, title: str, limit_s: float | None = None):
    start = time.perf_counter()
    status, detail = "FAIL", ""
    info: dict = {}
    try:
        yield info
        elapsed = time.perf_counter() - start
        if limit_s is not None and elapsed >= limit_s:
            detail = f" (runtime {elapsed:.1f}s exceeds {limit_s:g}s)"
            raise AssertionError(f"criterion {number} took {elapsed:.1f}s, limit {limit_s:g}s")
        status = "PASS"
        if info.get("note"):
            detail = f"  [{info['note']}]"
    except BaseException as exc:
        if not detail:
            first = str(exc).splitlines()[0] if str(exc) else ""
            detail = f" ({type(exc).__name__}: {first})"
            if info.get("note"):
                detail += f"  [{info['note']}]"
        raise
    finally:
        elapsed = time.perf_counter() - start
        ACCEPTANCE_LINES.append(f"[{status}] criterion {number}: {title}  {elapsed:.1f}s{detail}")


@pytest.fixture
def criterion():
    return _criterion


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
