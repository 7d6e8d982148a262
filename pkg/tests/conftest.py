import datetime as dt

import pytest

from capacon.ingest import ShiftCalendar, StationConfig


@pytest.fixture
def utc_calendar():
    """One 8.5h shift with three 25-minute breaks, UTC, every day."""
    return ShiftCalendar(
        shift_start=dt.time(6, 0),
        shift_end=dt.time(14, 30),
        breaks=(
            (dt.time(8, 0), dt.time(8, 25)),
            (dt.time(10, 30), dt.time(10, 55)),
            (dt.time(12, 30), dt.time(12, 55)),
        ),
        workdays=frozenset(range(7)),
        timezone="UTC",
    )


@pytest.fixture
def station_cfg():
    return StationConfig(station_id="C")


def ms(day: str, clock: str) -> int:
    """Epoch ms for '<day>T<clock>Z'."""
    d = dt.datetime.fromisoformat(f"{day}T{clock}+00:00")
    return round(d.timestamp() * 1000)
