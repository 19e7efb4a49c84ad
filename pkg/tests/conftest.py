import time
from contextlib import contextmanager

import pytest

ACCEPTANCE = []  # (number, title, passed, seconds, limit)


@pytest.fixture
def criterion():
    """Time a criterion, enforce its runtime limit and print a PASS/FAIL line."""

    @contextmanager
    def run(number, title, limit):
        t0 = time.perf_counter()
        ok = False
        try:
            yield
            ok = True
        finally:
            dt = time.perf_counter() - t0
            ok = ok and dt < limit
            ACCEPTANCE.append((number, title, ok, dt, limit))
            print(f"[{'PASS' if ok else 'FAIL'}] AC{number} {title}: {dt:.2f} s (limit {limit:g} s)")
        assert dt < limit, f"criterion {number} took {dt:.2f} s, limit {limit} s"

    return run


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, dt, limit in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  AC{number:<2} {title}  ({dt:.2f} s / {limit:g} s)")
