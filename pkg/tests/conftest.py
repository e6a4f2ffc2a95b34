import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tailrca.telemetry import MetricId, MetricSeries  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_series(values, metric=MetricId.NCCL_LATENCY, hz=100, start=0):
    return MetricSeries(metric, hz, start, np.asarray(values, dtype=float))


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(acceptance_log.LINES):
            terminalreporter.write_line(acceptance_log.LINES[n])
