"""Synthetic detection streams with analytically known ground truth.

A scenario script lists presence intervals for a worker and for identified
chairs at one station. generate() renders the detection stream frame by
frame on the shift-time grid; compute_oracle() derives the exact state
timeline, shares, and cycle records from the script alone, so pipeline
output can be verified end to end against an independent truth.
"""

from __future__ import annotations

import datetime as _dt
import gc
import json
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Optional

from .analytics import CycleRecord, TallyAccumulator
from .errors import InvalidScript
from .ingest import (
    CalendarResolver,
    DetectionBox,
    FrameRecord,
    ObjectClass,
    Scope,
    ShiftCalendar,
    ms_to_rfc3339,
)
from .statemach import StationStatus

IMAGE_SIZE = (1280, 720)
WORKER_SIZE = (80.0, 200.0)
CHAIR_SIZE = (150.0, 150.0)
WORKER_ANCHOR = (200.0, 400.0)
CHAIR_ANCHOR = (640.0, 400.0)

RNG_ALGORITHM = "MT19937"  # CPython's random.Random; stable across platforms


@dataclass(frozen=True)
class NoiseModel:
    """I.i.d. per-frame detector imperfections."""

    miss_prob: float = 0.0
    jitter_px: float = 0.0
    conf_range: tuple[float, float] = (0.9, 0.99)
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.miss_prob < 1.0:
            raise InvalidScript(f"miss_prob must be in [0, 1), got {self.miss_prob}")
        if self.jitter_px < 0:
            raise InvalidScript("jitter_px must be non-negative")
        lo, hi = self.conf_range
        if not (0.0 < lo <= hi <= 1.0):
            raise InvalidScript(f"conf_range must satisfy 0 < lo <= hi <= 1, got {self.conf_range}")


@dataclass(frozen=True)
class ScriptInterval:
    """Presence during [start_ms, end_ms): a worker, a chair, or both."""

    start_ms: int
    end_ms: int
    worker: bool = False
    chair_id: Optional[str] = None
    anchor: Optional[tuple[float, float]] = None  # chair box center override


@dataclass(frozen=True)
class ScenarioScript:
    station_id: str
    calendar: ShiftCalendar
    frame_rate: float
    start_date: _dt.date
    end_date: _dt.date  # inclusive; end before start means an empty scenario
    intervals: tuple[ScriptInterval, ...] = ()
    noise: NoiseModel = NoiseModel()

    def validate(self) -> None:
        if not self.station_id:
            raise InvalidScript("station_id must be non-empty")
        if self.frame_rate <= 0:
            raise InvalidScript("frame_rate must be positive")
        try:
            self.calendar.validate()
        except ValueError as exc:
            raise InvalidScript(f"bad calendar: {exc}") from None
        self.noise.validate()
        by_entity: dict[str, list[ScriptInterval]] = {}
        seen_chairs: set[str] = set()
        for iv in self.intervals:
            if iv.start_ms >= iv.end_ms:
                raise InvalidScript(f"empty interval at {iv.start_ms}")
            if not iv.worker and iv.chair_id is None:
                raise InvalidScript("interval contributes neither worker nor chair")
            if iv.worker:
                by_entity.setdefault("worker", []).append(iv)
            if iv.chair_id is not None:
                if iv.chair_id in seen_chairs:
                    raise InvalidScript(
                        f"chair_id {iv.chair_id!r} reused; each id is one cycle"
                    )
                seen_chairs.add(iv.chair_id)
                by_entity.setdefault(f"chair:{iv.chair_id}", []).append(iv)
        for worker_ivs in (by_entity.get("worker", []),):
            worker_ivs = sorted(worker_ivs, key=lambda iv: iv.start_ms)
            for a, b in zip(worker_ivs, worker_ivs[1:]):
                if b.start_ms < a.end_ms:
                    raise InvalidScript("worker intervals overlap")


def _frame_ms(base_ms: int, i: int, frame_rate: float) -> int:
    return base_ms + round(i * 1000.0 / frame_rate)


def _day_frame_count(start_ms: int, end_ms: int, frame_rate: float) -> int:
    if end_ms <= start_ms:
        return 0
    n = int((end_ms - start_ms) * frame_rate / 1000.0) + 2
    while n > 0 and _frame_ms(start_ms, n - 1, frame_rate) >= end_ms:
        n -= 1
    return n


def _workdays(script: ScenarioScript) -> Iterator[_dt.date]:
    day = script.start_date
    while day <= script.end_date:
        if day.weekday() in script.calendar.workdays:
            yield day
        day += _dt.timedelta(days=1)


class _ActiveSweep:
    """Tracks which (start, end, payload) items cover a monotone instant."""

    def __init__(self, items: list[tuple[int, int, object]]):
        self._pending = sorted(items, key=lambda it: it[0], reverse=True)
        self.active: list[tuple[int, int, object]] = []
        self._next_start = self._pending[-1][0] if self._pending else None
        self._min_end = 1 << 62

    def advance(self, ts_ms: int) -> None:
        start = self._next_start
        if start is not None and start <= ts_ms:
            pending = self._pending
            active = self.active
            me = self._min_end
            while pending and pending[-1][0] <= ts_ms:
                item = pending.pop()
                active.append(item)
                if item[1] < me:
                    me = item[1]
            self._min_end = me
            self._next_start = pending[-1][0] if pending else None
        if ts_ms >= self._min_end:
            self.active = [it for it in self.active if it[1] > ts_ms]
            self._min_end = min((it[1] for it in self.active), default=1 << 62)


def _boxes_for(iv: ScriptInterval) -> list[tuple[ObjectClass, float, float, float, float]]:
    """Corner-form (cls, x, y, w, h) boxes, pre-rounded to wire precision."""
    out = []
    if iv.worker:
        w, h = WORKER_SIZE
        cx, cy = WORKER_ANCHOR
        out.append(
            (ObjectClass.WORKER, round(cx - w / 2, 2), round(cy - h / 2, 2),
             round(w, 2), round(h, 2))
        )
    if iv.chair_id is not None:
        w, h = CHAIR_SIZE
        cx, cy = iv.anchor if iv.anchor is not None else CHAIR_ANCHOR
        out.append(
            (ObjectClass.CHAIR, round(cx - w / 2, 2), round(cy - h / 2, 2),
             round(w, 2), round(h, 2))
        )
    return out


def generate(script: ScenarioScript) -> tuple[Iterator[FrameRecord], "OracleTruth"]:
    """Frame records on the shift grid plus the analytic oracle."""
    script.validate()
    oracle = compute_oracle(script)

    def records() -> Iterator[FrameRecord]:
        for station, ts_ms, frame_idx, dets in _emit(script):
            boxes = [
                DetectionBox(cls, (x, y, w, h), conf)
                for cls, x, y, w, h, conf in dets
            ]
            yield FrameRecord(station, ts_ms, frame_idx, boxes)

    return records(), oracle


def stream_lines(script: ScenarioScript) -> Iterator[str]:
    """The same stream as generate(), rendered in the wire format."""
    script.validate()
    # Box geometry repeats every frame unless jitter perturbs it, so the
    # constant part of each detection object is rendered once.
    prefix_cache: dict[tuple, str] = {}
    cacheable = script.noise.jitter_px == 0.0
    join = ",".join
    for station, ts_ms, frame_idx, dets in _emit(script):
        parts = []
        for det in dets:
            conf = det[5]
            if cacheable:
                key = det[:5]
                pre = prefix_cache.get(key)
                if pre is None:
                    cls, x, y, w, h = key
                    pre = (
                        f'{{"cls":"{cls.value}","box":[{x:.2f},{y:.2f},'
                        f'{w:.2f},{h:.2f}],"conf":'
                    )
                    prefix_cache[key] = pre
                parts.append(f"{pre}{conf:.4f}}}")
            else:
                cls, x, y, w, h = det[:5]
                parts.append(
                    f'{{"cls":"{cls.value}","box":[{x:.2f},{y:.2f},'
                    f'{w:.2f},{h:.2f}],"conf":{conf:.4f}}}'
                )
        yield (
            f'{{"station":"{station}","ts":"{ms_to_rfc3339(ts_ms)}",'
            f'"frame":{frame_idx},"dets":[{join(parts)}]}}'
        )


def _emit(script: ScenarioScript):
    """(station, ts_ms, frame_idx, [(cls, cx, cy, w, h, conf), ...]) tuples."""
    noise = script.noise
    rng = random.Random(noise.seed)
    uniform = rng.uniform
    rand = rng.random
    miss = noise.miss_prob
    jitter = noise.jitter_px
    lo, hi = noise.conf_range
    fixed_conf = round(lo, 4) if lo == hi else None  # wire carries 4 decimals
    resolver = CalendarResolver(script.calendar)
    fps = script.frame_rate
    station = script.station_id
    boxes_by_iv = {id(iv): tuple(_boxes_for(iv)) for iv in script.intervals}
    frame_idx = 0
    for day in _workdays(script):
        s_ms, e_ms = resolver.shift_window_ms(day)
        n = _day_frame_count(s_ms, e_ms, fps)
        if n == 0:
            continue
        items = [
            (iv.start_ms, iv.end_ms, boxes_by_iv[id(iv)])
            for iv in script.intervals
            if iv.end_ms > s_ms and iv.start_ms < e_ms
        ]
        sweep = _ActiveSweep(items)
        advance = sweep.advance
        frame_of = _frame_ms
        for i in range(n):
            ts = frame_of(s_ms, i, fps)
            advance(ts)
            dets = []
            for item in sweep.active:
                for spec in item[2]:
                    if miss > 0.0 and rand() < miss:
                        continue
                    conf = fixed_conf if fixed_conf is not None else round(uniform(lo, hi), 4)
                    if jitter > 0.0:
                        cls, x, y, w, h = spec
                        # clamp so jitter cannot push the origin negative
                        x = round(x + uniform(-jitter, jitter), 2)
                        y = round(y + uniform(-jitter, jitter), 2)
                        dets.append((cls, x if x > 0 else 0.0, y if y > 0 else 0.0,
                                     w, h, conf))
                    else:
                        dets.append(spec + (conf,))
            yield station, ts, frame_idx, dets
            frame_idx += 1


@dataclass
class OracleTruth:
    """Script-derived truth: exact states, shares, and cycles."""

    station_id: str
    segments: list[tuple[int, int, StationStatus]]
    counts: dict[str, dict[str, list[int]]]  # grouping -> period -> 5 counts
    cycles: list[CycleRecord]
    meta: dict = field(default_factory=dict)

    def shares(self, grouping: str = "all", period: str = "all") -> dict[str, float]:
        c = self.counts.get(grouping, {}).get(period)
        if c is None:
            return {}
        denom = sum(c[:4])
        if denom == 0:
            return {}
        return {
            "productive": c[0] / denom * 100.0,
            "unproductive": c[1] / denom * 100.0,
            "downtime": c[2] / denom * 100.0,
            "idle": c[3] / denom * 100.0,
        }

    def total_frames(self) -> int:
        return sum(self.counts["all"]["all"]) if self.counts["all"] else 0

    def as_json_obj(self) -> dict:
        return {
            "station": self.station_id,
            "meta": self.meta,
            "shares": self.shares(),
            "counts": self.counts,
            "cycles": [
                {
                    "chair_id": c.track_id,
                    "start_ts": ms_to_rfc3339(c.start_ms),
                    "end_ts": ms_to_rfc3339(c.end_ms),
                    "duration_s": c.duration_s,
                }
                for c in self.cycles
            ],
            "timeline_segments": [
                [ms_to_rfc3339(a), ms_to_rfc3339(b), StationStatus(s).name.lower()]
                for a, b, s in self.segments
            ],
        }


def compute_oracle(script: ScenarioScript) -> OracleTruth:
    """Exact truth from the script alone (the pipeline is never consulted)."""
    script.validate()
    resolver = CalendarResolver(script.calendar)
    fps = script.frame_rate
    acc = TallyAccumulator(script.station_id, script.calendar.timezone)
    segments: list[tuple[int, int, StationStatus]] = []
    frames = 0
    for day in _workdays(script):
        s_ms, e_ms = resolver.shift_window_ms(day)
        n = _day_frame_count(s_ms, e_ms, fps)
        if n == 0:
            continue
        breaks = [
            (a, b) for a, b, scope in resolver.day_segments(day)
            if scope is Scope.BREAK
        ]
        items = [
            (iv.start_ms, iv.end_ms, (iv.worker, iv.chair_id is not None))
            for iv in script.intervals
            if iv.end_ms > s_ms and iv.start_ms < e_ms
        ]
        sweep = _ActiveSweep(items)
        bi = 0
        seg_start = None
        seg_status = None
        for i in range(n):
            ts = _frame_ms(s_ms, i, fps)
            sweep.advance(ts)
            while bi < len(breaks) and ts >= breaks[bi][1]:
                bi += 1
            if bi < len(breaks) and breaks[bi][0] <= ts:
                status = StationStatus.EXCLUDED
            else:
                worker = False
                chair = False
                for item in sweep.active:
                    flags = item[2]
                    if flags[0]:
                        worker = True
                    if flags[1]:
                        chair = True
                if worker:
                    status = (
                        StationStatus.PRODUCTIVE if chair else StationStatus.DOWNTIME
                    )
                else:
                    status = (
                        StationStatus.UNPRODUCTIVE if chair else StationStatus.IDLE
                    )
            acc.add(ts, status)
            frames += 1
            if status is not seg_status:
                if seg_status is not None:
                    segments.append((seg_start, ts, seg_status))
                seg_start = ts
                seg_status = status
        if seg_status is not None:
            segments.append((seg_start, e_ms, seg_status))
            seg_start = None
            seg_status = None
    cycles = [
        CycleRecord(iv.chair_id, script.station_id, iv.start_ms, iv.end_ms)
        for iv in sorted(script.intervals, key=lambda iv: (iv.start_ms, str(iv.chair_id)))
        if iv.chair_id is not None
    ]
    # noise parameters stay out: truth depends on the script alone, so two
    # seeds yield byte-identical oracles
    return OracleTruth(
        station_id=script.station_id,
        segments=segments,
        counts=acc.raw_counts(),
        cycles=cycles,
        meta={
            "frame_rate": script.frame_rate,
            "frames": frames,
            "start_date": script.start_date.isoformat(),
            "end_date": script.end_date.isoformat(),
        },
    )


def write_scenario(script: ScenarioScript, out_dir: str | Path) -> tuple[Path, Path]:
    """Render stream.ndjson and oracle.json for a script; returns both paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stream_path = out / "stream.ndjson"
    oracle_path = out / "oracle.json"
    was_enabled = gc.isenabled()
    gc.disable()  # per-frame allocations are acyclic; scans just cost time
    try:
        with open(stream_path, "w", encoding="utf-8", newline="\n") as fh:
            for line in stream_lines(script):
                fh.write(line)
                fh.write("\n")
        oracle = compute_oracle(script)
    finally:
        if was_enabled:
            gc.enable()
    with open(oracle_path, "w", encoding="utf-8") as fh:
        json.dump(oracle.as_json_obj(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "sim_meta.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "rng_algorithm": RNG_ALGORITHM,
                "seed": script.noise.seed,
                "miss_prob": script.noise.miss_prob,
                "jitter_px": script.noise.jitter_px,
                "conf_range": list(script.noise.conf_range),
            },
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")
    return stream_path, oracle_path


# --------------------------------------------------------------------------
# Bundled fixture mirroring the published station-C study shape
# --------------------------------------------------------------------------

_FIXTURE_TZ = "America/Toronto"
_FIXTURE_SHORT_ANCHOR = (1000.0, 400.0)
_FIXTURE_GHOST_ANCHOR = (1000.0, 150.0)


def fixture_calendar() -> ShiftCalendar:
    """8.5-hour single shift with three 25-minute breaks, all weekdays."""
    return ShiftCalendar(
        shift_start=_dt.time(6, 0),
        shift_end=_dt.time(14, 30),
        breaks=(
            (_dt.time(8, 0), _dt.time(8, 25)),
            (_dt.time(10, 30), _dt.time(10, 55)),
            (_dt.time(12, 30), _dt.time(12, 55)),
        ),
        workdays=frozenset(range(7)),
        timezone=_FIXTURE_TZ,
    )


def paper_fixture(
    noise: NoiseModel = NoiseModel(seed=20230703),
    start_date: _dt.date = _dt.date(2023, 7, 3),
    weeks: int = 26,
) -> ScenarioScript:
    """26-week station-C scenario with shares 70.6 / 27.9 / 1.0 / 0.5.

    Daily pattern (local time, 0.3 fps grid):
      06:00:00  idle, nobody on station                     (39 frames)
      06:02:10  worker and chair arrive, productive
      08:00:00  chair leaves exactly at break 1
      08:25:00  downtime: worker back from break, no chair  (78 frames)
      08:29:20  next chair arrives, productive
      10:30:00  worker leaves exactly at break 2
      10:55:00  unproductive: chair waiting, no worker
      13:21:23.333  worker returns, productive to shift end
      14:30:00  shift ends

    Three overlapping short chair visits per day (09:00, 09:10, 09:20) pin
    the weekly cycle-time median: their tracked dwell is exactly 300 s on
    odd ISO weeks and 450 s on even ISO weeks (week 42 falls on an even
    week). Wednesdays add a 90 s chair visit that the two-minute cycle
    filter must drop. Shares derive only from the long-running entities, so
    the oracle split is 70.6 / 27.9 / 1.0 / 0.5 (+-0.01) of in-shift time.
    """
    cal = fixture_calendar()
    resolver = CalendarResolver(cal)
    end_date = start_date + _dt.timedelta(days=7 * weeks - 1)
    period_ms = round(1000.0 / 0.3)  # 3333 ms; one frame-grid step
    intervals: list[ScriptInterval] = []
    day = start_date
    while day <= end_date:
        base, shift_end = resolver.shift_window_ms(day)
        tag = day.isoformat()

        def off(seconds: float) -> int:
            return base + round(seconds * 1000)

        intervals.append(ScriptInterval(off(130), off(16200), worker=True))
        intervals.append(
            ScriptInterval(base + 26_483_333, off(30600), worker=True)
        )
        intervals.append(
            ScriptInterval(off(130), off(7200), chair_id=f"L1-{tag}")
        )
        intervals.append(
            ScriptInterval(off(8960), off(30600), chair_id=f"L2-{tag}")
        )
        short_s = 300 if day.isocalendar()[1] % 2 == 1 else 450
        for k, start_s in enumerate((10800, 11400, 12000)):
            intervals.append(
                ScriptInterval(
                    off(start_s),
                    off(start_s + short_s) + period_ms,
                    chair_id=f"S{k + 1}-{tag}",
                    anchor=_FIXTURE_SHORT_ANCHOR,
                )
            )
        if day.weekday() == 2:  # Wednesday
            intervals.append(
                ScriptInterval(
                    off(18000), off(18090),
                    chair_id=f"G-{tag}",
                    anchor=_FIXTURE_GHOST_ANCHOR,
                )
            )
        day += _dt.timedelta(days=1)
    return ScenarioScript(
        station_id="C",
        calendar=cal,
        frame_rate=0.3,
        start_date=start_date,
        end_date=end_date,
        intervals=tuple(intervals),
        noise=noise,
    )
