import numpy as np
import pytest

from fugu.domain import make_chunk


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def two_version_chunk():
    # version 0: Q=14 (small), version 1: Q=16 (large)
    return make_chunk(0, [100_000, 200_000], [14.0, 16.0])


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion; printed in the summary."""

    def record(name: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
