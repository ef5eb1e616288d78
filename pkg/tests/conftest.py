"""Shared, session-cached solutions (the staged solves take tens of seconds)."""

from __future__ import annotations

import functools

import pytest

from sohb.limiter import LimiterSpec
from sohb.model import SystemParams, equilibrium_solve
from sohb.solver import SolveConfig, solve_so

PRESETS = {
    "test1": SystemParams(L_g=1e-3),
    "test2": SystemParams(L_g=1e-3, lim=LimiterSpec(200.0, -500.0)),
    "test3": SystemParams(L_g=1.5e-3, lim=LimiterSpec(200.0, -500.0)),
    "test4": SystemParams(L_g=1.5e-3, lim=LimiterSpec(200.0, 0.0)),
}

# acceptance verdicts, criterion number -> summary line
RESULTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])


@functools.lru_cache(maxsize=None)
def solved(test: str, order: int = 3, seeded_from: str | None = None):
    """SolveReport for a preset; ``seeded_from`` continues from another preset's solution."""
    p = PRESETS[test]
    seed = solved(seeded_from, order).solution if seeded_from else None
    return solve_so(p, SolveConfig(order=order), seed=seed)


@pytest.fixture(scope="session")
def test1():
    return solved("test1")


@pytest.fixture(scope="session")
def p1():
    return PRESETS["test1"]


@pytest.fixture(scope="session")
def eq1(p1):
    return equilibrium_solve(p1)
