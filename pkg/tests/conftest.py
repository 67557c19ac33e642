import io
from datetime import datetime, timedelta

import numpy as np
import pytest

from evload.ingest import Flag, StationSeries


def make_series(values, start=datetime(2024, 3, 4), step_minutes=15, peak=None, station="s1"):
    """Series on a 15-minute grid; NaN entries become missing cells."""
    values = np.asarray(values, dtype=float)
    ts = tuple(start + k * timedelta(minutes=step_minutes) for k in range(len(values)))
    peak = values * 2 if peak is None else np.asarray(peak, dtype=float)
    return StationSeries(station, ts, values, peak, values.copy(), (Flag.MEASURED,) * len(values))


def csv_bytes(rows, header="timestamp,avg_kwh,peak_kwh,last_kwh"):
    return io.BytesIO(("\n".join([header, *rows]) + "\n").encode("utf-8"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is not None and module.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(module.RESULTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
