"""Aggregation of state timelines and chair cycle statistics.

Produces state shares per calendar grouping (whole run, year-month, date,
hour-of-day, ISO week), per-chair dwell records, and weekly five-number
summaries of cycle times. Groupings follow the local wall clock of the
station calendar.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence
from zoneinfo import ZoneInfo

import numpy as np

from .errors import OrphanEvent
from .ingest import ObjectClass, ms_to_datetime, ms_to_rfc3339
from .statemach import StationStatus
from .tracker import EventKind, TrackEvent

GROUPINGS = ("all", "year-month", "date", "hour-of-day", "iso-week")

_STATUS_ORDER = (
    StationStatus.PRODUCTIVE,
    StationStatus.UNPRODUCTIVE,
    StationStatus.DOWNTIME,
    StationStatus.IDLE,
)


@dataclass(frozen=True)
class StateTally:
    """Frame counts for one period; shares are over in-shift frames only."""

    station_id: str
    period_kind: str
    period: str
    counts: tuple[int, int, int, int, int]  # indexed by StationStatus

    @property
    def total_frames(self) -> int:
        return sum(self.counts)

    @property
    def total_in_shift(self) -> int:
        return sum(self.counts[:4])

    @property
    def excluded(self) -> int:
        return self.counts[4]

    def shares(self) -> Optional[tuple[float, float, float, float]]:
        """In-shift fractions (productive, unproductive, downtime, idle)."""
        denom = self.total_in_shift
        if denom == 0:
            return None
        return tuple(self.counts[s] / denom for s in _STATUS_ORDER)  # type: ignore[return-value]


@dataclass(frozen=True)
class CycleRecord:
    """One chair's dwell at a station, from track start to track end."""

    track_id: int | str
    station_id: str
    start_ms: int
    end_ms: int

    @property
    def duration_s(self) -> float:
        return (self.end_ms - self.start_ms) / 1000.0


@dataclass(frozen=True)
class BoxStats:
    """Five-number summary in minutes."""

    count: int
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float


class PeriodSegmenter:
    """Maps epoch-ms instants to local calendar keys, one hour at a time.

    Consecutive lookups inside the same local hour are O(1); crossing a
    boundary triggers one datetime conversion.
    """

    def __init__(self, timezone: str | ZoneInfo):
        self._zone = ZoneInfo(timezone) if isinstance(timezone, str) else timezone
        self._start = 0
        self._end = -1  # force a rebuild on first use
        self._keys: tuple[str, str, str, str] = ("", "", "", "")

    def keys_for(self, ts_ms: int) -> tuple[str, str, str, str]:
        """(year-month, date, hour-of-day, iso-week) keys for one instant."""
        if not self._start <= ts_ms < self._end:
            self._rebuild(ts_ms)
        return self._keys

    def segment_end(self, ts_ms: int) -> int:
        if not self._start <= ts_ms < self._end:
            self._rebuild(ts_ms)
        return self._end

    def _rebuild(self, ts_ms: int) -> None:
        local = ms_to_datetime(ts_ms).astimezone(self._zone)
        hour_start = local.replace(minute=0, second=0, microsecond=0)
        self._start = round(hour_start.timestamp() * 1000)
        self._end = round((hour_start + _dt.timedelta(hours=1)).timestamp() * 1000)
        iso_year, iso_week, _ = local.isocalendar()
        self._keys = (
            f"{local.year:04d}-{local.month:02d}",
            local.date().isoformat(),
            f"{local.hour:02d}",
            f"{iso_year:04d}-W{iso_week:02d}",
        )


class TallyAccumulator:
    """Streaming frame-count accumulator over all groupings at once."""

    def __init__(self, station_id: str, timezone: str):
        self.station_id = station_id
        self._seg = PeriodSegmenter(timezone)
        self._seg_end = -1
        self._seg_keys: tuple[str, str, str, str] = ("", "", "", "")
        self._seg_counts = [0, 0, 0, 0, 0]
        # grouping -> period key -> [5 counts]
        self._counts: dict[str, dict[str, list[int]]] = {
            kind: {} for kind in GROUPINGS
        }

    def add(self, ts_ms: int, status: StationStatus) -> None:
        if ts_ms >= self._seg_end:
            self._flush_segment()
            self._seg_keys = self._seg.keys_for(ts_ms)
            self._seg_end = self._seg.segment_end(ts_ms)
        self._seg_counts[status] += 1

    def _flush_segment(self) -> None:
        counts = self._seg_counts
        if not any(counts):
            return
        month, date, hour, week = self._seg_keys
        for kind, key in (
            ("all", "all"),
            ("year-month", month),
            ("date", date),
            ("hour-of-day", hour),
            ("iso-week", week),
        ):
            bucket = self._counts[kind].get(key)
            if bucket is None:
                bucket = [0, 0, 0, 0, 0]
                self._counts[kind][key] = bucket
            for s in range(5):
                bucket[s] += counts[s]
        self._seg_counts = [0, 0, 0, 0, 0]

    def finish(self) -> list[StateTally]:
        self._flush_segment()
        out = []
        for kind in GROUPINGS:
            for key in sorted(self._counts[kind]):
                out.append(
                    StateTally(
                        self.station_id, kind, key,
                        tuple(self._counts[kind][key]),  # type: ignore[arg-type]
                    )
                )
        return out

    def raw_counts(self) -> dict[str, dict[str, list[int]]]:
        self._flush_segment()
        return self._counts


def tally(
    timeline: Iterable[tuple[int, StationStatus]],
    grouping: str,
    timezone: str,
    station_id: str = "",
) -> list[StateTally]:
    """Aggregate a (ts_ms, status) timeline into one tally per period.

    The timeline must be sorted by timestamp; periods follow the local wall
    clock of `timezone`. Excluded frames are counted but never enter share
    denominators.
    """
    if grouping not in GROUPINGS:
        raise ValueError(f"unknown grouping {grouping!r}; expected one of {GROUPINGS}")
    acc = TallyAccumulator(station_id, timezone)
    for ts_ms, status in timeline:
        acc.add(ts_ms, status)
    return [t for t in acc.finish() if t.period_kind == grouping]


def extract_cycles(
    events: Iterable[TrackEvent],
    cls: ObjectClass = ObjectClass.CHAIR,
) -> list[CycleRecord]:
    """Dwell records for every tracked object of `cls` that was confirmed.

    Requires each Ended event to follow a Started event for the same track.
    """
    started: dict[tuple[str, int], int] = {}
    confirmed: set[tuple[str, int]] = set()
    cycles: list[CycleRecord] = []
    for ev in events:
        key = (ev.station_id, ev.track_id)
        if ev.kind is EventKind.STARTED:
            started[key] = ev.ts_ms
        elif ev.kind is EventKind.CONFIRMED:
            confirmed.add(key)
        else:
            start = started.pop(key, None)
            if start is None:
                raise OrphanEvent(
                    f"ended track {ev.track_id} at station {ev.station_id!r} "
                    "was never started"
                )
            was_confirmed = key in confirmed
            confirmed.discard(key)
            if ev.cls is cls and was_confirmed:
                cycles.append(CycleRecord(ev.track_id, ev.station_id, start, ev.ts_ms))
    return cycles


def filter_cycles(
    cycles: Iterable[CycleRecord], min_seconds: float = 120.0
) -> list[CycleRecord]:
    """Drop cycles shorter than min_seconds (inclusive boundary kept)."""
    if min_seconds < 0:
        raise ValueError("min_seconds must be non-negative")
    return [c for c in cycles if c.duration_s >= min_seconds]


def week_key_of(ts_ms: int, timezone: str) -> str:
    local = ms_to_datetime(ts_ms).astimezone(ZoneInfo(timezone))
    iso_year, iso_week, _ = local.isocalendar()
    return f"{iso_year:04d}-W{iso_week:02d}"


def weekly_box_stats(
    cycles: Iterable[CycleRecord], timezone: str = "UTC"
) -> dict[str, BoxStats]:
    """Five-number summary of cycle minutes per ISO week of cycle start.

    Quantiles use linear interpolation between closest order statistics.
    """
    by_week: dict[str, list[float]] = {}
    for c in cycles:
        by_week.setdefault(week_key_of(c.start_ms, timezone), []).append(
            c.duration_s / 60.0
        )
    out: dict[str, BoxStats] = {}
    for week in sorted(by_week):
        vals = np.asarray(by_week[week])
        q = np.quantile(vals, [0.0, 0.25, 0.5, 0.75, 1.0])
        out[week] = BoxStats(
            len(vals), float(q[0]), float(q[1]), float(q[2]), float(q[3]), float(q[4])
        )
    return out


# --------------------------------------------------------------------------
# Report rendering
# --------------------------------------------------------------------------


@dataclass
class ReportBundle:
    """All report tables for a run, ready to serialize."""

    tallies: list[StateTally]
    cycles: list[CycleRecord]
    weekly: dict[str, dict[str, BoxStats]]  # station -> week -> stats
    meta: dict = field(default_factory=dict)

    def shares_rows(self) -> list[list[str]]:
        rows = []
        for t in sorted(self.tallies, key=_tally_sort_key):
            shares = t.shares()
            if shares is None:
                continue
            rows.append(
                [
                    t.station_id,
                    t.period_kind,
                    t.period,
                    f"{shares[0] * 100:.1f}",
                    f"{shares[1] * 100:.1f}",
                    f"{shares[2] * 100:.1f}",
                    f"{shares[3] * 100:.1f}",
                    str(t.total_in_shift),
                ]
            )
        return rows

    def cycles_rows(self) -> list[list[str]]:
        rows = []
        for c in sorted(self.cycles, key=lambda c: (c.station_id, c.start_ms, str(c.track_id))):
            rows.append(
                [
                    c.station_id,
                    str(c.track_id),
                    ms_to_rfc3339(c.start_ms),
                    ms_to_rfc3339(c.end_ms),
                    f"{c.duration_s:.3f}",
                ]
            )
        return rows

    def weekly_rows(self) -> list[list[str]]:
        rows = []
        for station in sorted(self.weekly):
            for week, st in sorted(self.weekly[station].items()):
                rows.append(
                    [
                        station,
                        week,
                        str(st.count),
                        f"{st.minimum:.4f}",
                        f"{st.q1:.4f}",
                        f"{st.median:.4f}",
                        f"{st.q3:.4f}",
                        f"{st.maximum:.4f}",
                    ]
                )
        return rows

    def as_json_obj(self) -> dict:
        shares = {}
        for t in sorted(self.tallies, key=_tally_sort_key):
            s = shares.setdefault(t.station_id, {}).setdefault(t.period_kind, {})
            entry = {
                "counts": {
                    "productive": t.counts[0],
                    "unproductive": t.counts[1],
                    "downtime": t.counts[2],
                    "idle": t.counts[3],
                    "excluded": t.counts[4],
                },
                "in_shift_frames": t.total_in_shift,
                "total_frames": t.total_frames,
            }
            sh = t.shares()
            if sh is not None:
                entry["pct_of_in_shift"] = {
                    "productive": sh[0] * 100,
                    "unproductive": sh[1] * 100,
                    "downtime": sh[2] * 100,
                    "idle": sh[3] * 100,
                }
            if t.total_frames:
                entry["pct_of_recorded"] = {
                    "productive": t.counts[0] / t.total_frames * 100,
                    "unproductive": t.counts[1] / t.total_frames * 100,
                    "downtime": t.counts[2] / t.total_frames * 100,
                    "idle": t.counts[3] / t.total_frames * 100,
                    "excluded": t.counts[4] / t.total_frames * 100,
                }
            s[t.period] = entry
        cycles = [
            {
                "station": c.station_id,
                "track_id": c.track_id,
                "start_ts": ms_to_rfc3339(c.start_ms),
                "end_ts": ms_to_rfc3339(c.end_ms),
                "duration_s": c.duration_s,
            }
            for c in sorted(self.cycles, key=lambda c: (c.station_id, c.start_ms, str(c.track_id)))
        ]
        weekly = {
            station: {
                week: {
                    "count": st.count,
                    "min_min": st.minimum,
                    "q1_min": st.q1,
                    "median_min": st.median,
                    "q3_min": st.q3,
                    "max_min": st.maximum,
                }
                for week, st in sorted(self.weekly[station].items())
            }
            for station in sorted(self.weekly)
        }
        return {
            "meta": self.meta,
            "shares": shares,
            "cycles": cycles,
            "weekly_box": weekly,
        }


def _tally_sort_key(t: StateTally):
    return (t.station_id, GROUPINGS.index(t.period_kind), t.period)


SHARES_HEADER = [
    "station", "period_kind", "period",
    "productive_pct", "unproductive_pct", "downtime_pct", "idle_pct", "frames",
]
CYCLES_HEADER = ["station", "track_id", "start_ts", "end_ts", "duration_s"]
WEEKLY_HEADER = [
    "station", "iso_week", "count",
    "min_min", "q1_min", "median_min", "q3_min", "max_min",
]


def write_report(bundle: ReportBundle, out_dir: str | Path) -> None:
    """Write shares.csv, cycles.csv, weekly_box.csv, and report.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "shares.csv", SHARES_HEADER, bundle.shares_rows())
    _write_csv(out / "cycles.csv", CYCLES_HEADER, bundle.cycles_rows())
    _write_csv(out / "weekly_box.csv", WEEKLY_HEADER, bundle.weekly_rows())
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(bundle.as_json_obj(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: Path, header: list[str], rows: list[list[str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
