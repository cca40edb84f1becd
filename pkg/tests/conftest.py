from dataclasses import replace

import pytest

from dassim.config import SimConfig

SMALL_WORLD = SimConfig(
    nb_nodes=50,
    row_size_n=16,
    col_size_n=16,
    row_size_k=8,
    col_size_k=8,
    custody_row=2,
    custody_col=2,
    net_degree=4,
    latency_ms=50,
    step_duration_ms=50,
    slot_duration_ms=12000,
    seed=11,
)


def small_world(**overrides) -> SimConfig:
    return replace(SMALL_WORLD, **overrides)


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_log():
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
