import csv
import json
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capacon.analytics import (
    BoxStats,
    CycleRecord,
    ReportBundle,
    StateTally,
    extract_cycles,
    filter_cycles,
    tally,
    weekly_box_stats,
    write_report,
)
from capacon.errors import OrphanEvent
from capacon.ingest import ObjectClass
from capacon.statemach import StationStatus
from capacon.tracker import EventKind, TrackEvent

from conftest import ms

P, U, D, I, X = (
    StationStatus.PRODUCTIVE,
    StationStatus.UNPRODUCTIVE,
    StationStatus.DOWNTIME,
    StationStatus.IDLE,
    StationStatus.EXCLUDED,
)


def timeline(day, start, statuses, step_ms=3334):
    t0 = ms(day, start)
    return [(t0 + i * step_ms, s) for i, s in enumerate(statuses)]


class TestTally:
    def test_direct_counts_and_shares(self):
        tl = timeline("2023-07-05", "09:00:00.000", [P] * 7 + [I] * 3)
        (t,) = tally(tl, "all", "UTC", "C")
        assert t.counts == (7, 0, 0, 3, 0)
        assert t.shares() == (0.7, 0.0, 0.0, 0.3)

    def test_all_excluded_has_zero_denominator(self):
        tl = timeline("2023-07-05", "09:00:00.000", [X] * 5)
        (t,) = tally(tl, "all", "UTC", "C")
        assert t.total_in_shift == 0
        assert t.shares() is None

    def test_two_months_partition(self):
        tl = timeline("2023-07-31", "23:50:00.000", [P] * 400)  # crosses midnight
        parts = tally(tl, "year-month", "UTC", "C")
        assert [t.period for t in parts] == ["2023-07", "2023-08"]
        assert sum(t.total_frames for t in parts) == 400

    def test_hour_of_day_accumulates_across_days(self):
        tl = timeline("2023-07-05", "09:59:50.000", [P] * 10)
        tl += timeline("2023-07-06", "09:59:50.000", [U] * 10)
        parts = tally(tl, "hour-of-day", "UTC", "C")
        assert [t.period for t in parts] == ["09", "10"]
        nine = parts[0]
        assert nine.counts[P] == 3 and nine.counts[U] == 3

    def test_local_zone_grouping(self):
        # 01:30 UTC on July 6 is still July 5 in Toronto
        tl = timeline("2023-07-06", "01:30:00.000", [P] * 3)
        parts = tally(tl, "date", "America/Toronto", "C")
        assert [t.period for t in parts] == ["2023-07-05"]

    def test_unknown_grouping(self):
        with pytest.raises(ValueError):
            tally([], "decade", "UTC")

    @given(
        st.lists(st.sampled_from([P, U, D, I, X]), min_size=1, max_size=400),
        st.sampled_from(["all", "year-month", "date", "hour-of-day", "iso-week"]),
    )
    @settings(max_examples=100, deadline=None)
    def test_partition_and_share_normalization(self, statuses, grouping):
        tl = timeline("2023-12-30", "22:00:00.000", statuses, step_ms=120_000)
        parts = tally(tl, grouping, "UTC", "C")
        assert sum(t.total_frames for t in parts) == len(statuses)
        for t in parts:
            shares = t.shares()
            if shares is not None:
                assert sum(shares) == pytest.approx(1.0, abs=1e-9)


def ev(kind, track_id, cls, t, station="C"):
    return TrackEvent(kind, track_id, cls, station, t)


class TestExtractCycles:
    def test_started_ended_duration(self):
        t0 = ms("2023-07-05", "09:00:00.000")
        events = [
            ev(EventKind.STARTED, 1, ObjectClass.CHAIR, t0),
            ev(EventKind.CONFIRMED, 1, ObjectClass.CHAIR, t0 + 7000),
            ev(EventKind.ENDED, 1, ObjectClass.CHAIR, t0 + 360_000),
        ]
        (c,) = extract_cycles(events)
        assert c.duration_s == 360.0
        assert c.start_ms == t0

    def test_worker_events_filtered(self):
        t0 = 0
        events = [
            ev(EventKind.STARTED, 1, ObjectClass.WORKER, t0),
            ev(EventKind.CONFIRMED, 1, ObjectClass.WORKER, t0 + 1),
            ev(EventKind.ENDED, 1, ObjectClass.WORKER, t0 + 2),
        ]
        assert extract_cycles(events) == []

    def test_never_confirmed_no_cycle(self):
        events = [
            ev(EventKind.STARTED, 1, ObjectClass.CHAIR, 0),
            ev(EventKind.ENDED, 1, ObjectClass.CHAIR, 10),
        ]
        assert extract_cycles(events) == []

    def test_orphan_ended_raises(self):
        with pytest.raises(OrphanEvent):
            extract_cycles([ev(EventKind.ENDED, 9, ObjectClass.CHAIR, 5)])


class TestFilterCycles:
    def _cycle(self, seconds):
        return CycleRecord(1, "C", 0, round(seconds * 1000))

    def test_short_cycle_dropped(self):
        assert filter_cycles([self._cycle(90)]) == []

    def test_boundary_retained(self):
        assert len(filter_cycles([self._cycle(120)])) == 1

    def test_zero_threshold_identity(self):
        cycles = [self._cycle(5), self._cycle(500)]
        assert filter_cycles(cycles, 0) == cycles

    @given(st.lists(st.floats(1, 1000, allow_nan=False), max_size=50),
           st.floats(0, 500, allow_nan=False), st.floats(0, 500, allow_nan=False))
    @settings(max_examples=100)
    def test_raising_threshold_monotone(self, durations, a, b):
        lo, hi = sorted((a, b))
        cycles = [CycleRecord(i, "C", 0, round(d * 1000)) for i, d in enumerate(durations)]
        kept_lo = filter_cycles(cycles, lo)
        kept_hi = filter_cycles(cycles, hi)
        assert len(kept_hi) <= len(kept_lo)
        if kept_hi:
            med_lo = float(np.median([c.duration_s for c in kept_lo]))
            med_hi = float(np.median([c.duration_s for c in kept_hi]))
            assert med_hi >= med_lo - 1e-9


class TestWeeklyBoxStats:
    def _cycles_in_week(self, minutes, day="2023-07-05"):
        t0 = ms(day, "09:00:00.000")
        return [
            CycleRecord(i, "C", t0 + i * 1000, t0 + i * 1000 + round(m * 60_000))
            for i, m in enumerate(minutes)
        ]

    def test_exact_order_statistics_odd(self):
        stats = weekly_box_stats(self._cycles_in_week([1, 2, 3, 4, 5]))
        (bs,) = stats.values()
        assert (bs.minimum, bs.q1, bs.median, bs.q3, bs.maximum) == (1, 2, 3, 4, 5)

    def test_single_cycle_degenerate(self):
        stats = weekly_box_stats(self._cycles_in_week([5]))
        (bs,) = stats.values()
        assert (bs.minimum, bs.q1, bs.median, bs.q3, bs.maximum) == (5, 5, 5, 5, 5)

    def test_linear_interpolation_median(self):
        stats = weekly_box_stats(self._cycles_in_week([4, 5, 6, 7]))
        (bs,) = stats.values()
        assert bs.median == 5.5

    def test_week_key_is_iso(self):
        stats = weekly_box_stats(self._cycles_in_week([5], day="2023-01-01"))
        assert list(stats) == ["2022-W52"]  # Jan 1 2023 is ISO week 52 of 2022

    def test_quantiles_match_sort_oracle(self):
        rng = random.Random(13)
        for trial in range(30):
            n = rng.randint(1, 10_000 if trial == 0 else 500)
            minutes = [rng.uniform(0.5, 600) for _ in range(n)]
            stats = weekly_box_stats(self._cycles_in_week(minutes))
            (bs,) = stats.values()
            # durations are stored at millisecond precision
            data = sorted(round(m * 60_000) / 60_000 for m in minutes)

            def q(p):
                # linear interpolation between closest order statistics
                pos = p * (len(data) - 1)
                lo = int(pos)
                hi = min(lo + 1, len(data) - 1)
                frac = pos - lo
                return data[lo] * (1 - frac) + data[hi] * frac

            assert bs.minimum == pytest.approx(data[0])
            assert bs.q1 == pytest.approx(q(0.25))
            assert bs.median == pytest.approx(q(0.5))
            assert bs.q3 == pytest.approx(q(0.75))
            assert bs.maximum == pytest.approx(data[-1])
            assert bs.count == n

    def test_invariants_ordered(self):
        rng = random.Random(14)
        minutes = [rng.uniform(1, 100) for _ in range(37)]
        (bs,) = weekly_box_stats(self._cycles_in_week(minutes)).values()
        assert bs.minimum <= bs.q1 <= bs.median <= bs.q3 <= bs.maximum


class TestReport:
    def _bundle(self):
        tallies = [
            StateTally("C", "all", "all", (706, 279, 10, 5, 450)),
            StateTally("C", "date", "2023-07-05", (706, 279, 10, 5, 450)),
            StateTally("C", "date", "2023-07-06", (0, 0, 0, 0, 9)),  # all excluded
        ]
        t0 = ms("2023-07-05", "09:00:00.000")
        cycles = [CycleRecord(3, "C", t0, t0 + 300_000)]
        weekly = {"C": weekly_box_stats(cycles)}
        return ReportBundle(tallies, cycles, weekly)

    def test_share_rows_sum_to_100(self, tmp_path):
        bundle = self._bundle()
        rows = bundle.shares_rows()
        for row in rows:
            assert sum(float(v) for v in row[3:7]) == pytest.approx(100.0, abs=0.11)

    def test_zero_denominator_period_omitted(self):
        rows = self._bundle().shares_rows()
        assert all(row[2] != "2023-07-06" for row in rows)

    def test_csv_files_written(self, tmp_path):
        write_report(self._bundle(), tmp_path)
        with open(tmp_path / "shares.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == [
            "station", "period_kind", "period",
            "productive_pct", "unproductive_pct", "downtime_pct", "idle_pct", "frames",
        ]
        assert rows[1][3] == "70.6"  # 1-decimal formatting
        with open(tmp_path / "cycles.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[1][4] == "300.000"
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["shares"]["C"]["all"]["all"]["pct_of_in_shift"]["productive"] == pytest.approx(70.6)
        assert "pct_of_recorded" in report["shares"]["C"]["all"]["all"]

    def test_daily_rows_ascending(self):
        tallies = [
            StateTally("C", "date", d, (10, 0, 0, 0, 0))
            for d in ("2023-07-06", "2023-07-05")
        ]
        bundle = ReportBundle(tallies, [], {})
        rows = bundle.shares_rows()
        assert [r[2] for r in rows] == ["2023-07-05", "2023-07-06"]
