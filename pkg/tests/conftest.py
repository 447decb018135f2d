from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from monoflow.grid import GridSpec, build_grid

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def line_grid():
    return build_grid(GridSpec(1, (-4.0,), (4.0,), (128,)))


@pytest.fixture
def plane_grid():
    return build_grid(GridSpec(2, (-3.0, -3.0), (3.0, 3.0), (32, 32)))


@pytest.fixture
def rng():
    return np.random.default_rng(20260101)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def report_line():
    """Collect one summary line per acceptance criterion."""
    def add(label: str, ok: bool, detail: str):
        ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
        print(ACCEPTANCE_LINES[-1])
        return ok
    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
