"""Frame-stream parsing, validation, and shift-calendar resolution.

The wire format is one JSON object per line:

    {"station": "C", "ts": "2023-07-03T10:06:40.000Z", "frame": 123,
     "dets": [{"cls": "worker", "box": [x, y, w, h], "conf": 0.98}, ...]}

Timestamps are handled internally as integer epoch milliseconds; the wire
format is RFC 3339 UTC with millisecond precision.
"""

from __future__ import annotations

import datetime as _dt
import enum
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Annotated, Iterable, Iterator, Optional, Sequence
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

import msgspec

from .errors import (
    ExcessiveMalformedInput,
    MalformedRecord,
    NonMonotonicTimestamp,
    UnknownTimezone,
)

_EPOCH = _dt.datetime(1970, 1, 1, tzinfo=_dt.timezone.utc)


class ObjectClass(enum.Enum):
    WORKER = "worker"
    CHAIR = "chair"


_CLS_FROM_WIRE = {"worker": ObjectClass.WORKER, "chair": ObjectClass.CHAIR}


class Scope(enum.IntEnum):
    """Where an instant falls relative to the shift calendar."""

    IN_SHIFT = 0
    BREAK = 1
    OFF_SHIFT = 2


# Coordinate bounds double as finiteness guards: JSON "1e999" style
# overflows are rejected in the decoder rather than checked per field in
# Python. gc=False keeps these high-churn objects off the cycle collector.
_Coord = Annotated[float, msgspec.Meta(ge=0, le=1e308)]
_Extent = Annotated[float, msgspec.Meta(gt=0, le=1e308)]


class DetectionBox(msgspec.Struct, gc=False):
    """One class-labeled, scored box in pixel coordinates (x, y, w, h).

    Doubles as the wire schema: decoding enforces the class vocabulary,
    positive extent, non-negative origin, and confidence in [0, 1].
    """

    cls: ObjectClass
    box: tuple[_Coord, _Coord, _Extent, _Extent]
    confidence: Annotated[float, msgspec.Meta(ge=0, le=1)] = msgspec.field(
        default=1.0, name="conf"
    )

    def validate(self) -> None:
        x, y, w, h = self.box
        if not (w > 0 and h > 0):
            raise ValueError(f"box width/height must be positive, got {self.box}")
        if x < 0 or y < 0:
            raise ValueError(f"box origin must be non-negative, got {self.box}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence outside [0, 1]: {self.confidence}")


class _WireFrame(msgspec.Struct, gc=False):
    station: Annotated[str, msgspec.Meta(min_length=1)]
    ts: str
    frame: Annotated[int, msgspec.Meta(ge=0)]
    dets: list[DetectionBox]


_wire_decode = msgspec.json.Decoder(_WireFrame).decode


@dataclass(slots=True)
class FrameRecord:
    """One camera frame: all detections observed at one instant.

    An empty detection list is a valid record; absence is first-class data.
    """

    station_id: str
    ts_ms: int
    frame_index: int
    detections: list[DetectionBox]

    @property
    def timestamp(self) -> _dt.datetime:
        return ms_to_datetime(self.ts_ms)


@dataclass(frozen=True)
class StationConfig:
    station_id: str
    roi: Optional[tuple[tuple[float, float], ...]] = None
    frame_rate: float = 0.3
    image_size: tuple[int, int] = (1280, 720)

    def validate(self) -> None:
        if not self.station_id:
            raise ValueError("station_id must be non-empty")
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")
        if self.roi is not None:
            if len(self.roi) < 3:
                raise ValueError("roi needs at least 3 vertices")
            if abs(_polygon_area(self.roi)) <= 0.0:
                raise ValueError("roi has zero area")


@dataclass(frozen=True)
class ShiftCalendar:
    """Shift window, break intervals, and workdays in a local timezone.

    All interval conventions are half-open: [start, end).
    """

    shift_start: _dt.time
    shift_end: _dt.time
    breaks: tuple[tuple[_dt.time, _dt.time], ...] = ()
    workdays: frozenset[int] = frozenset(range(7))  # 0=Monday .. 6=Sunday
    timezone: str = "UTC"

    def validate(self) -> None:
        if self.shift_start >= self.shift_end:
            raise ValueError("shift_start must precede shift_end")
        prev_end = None
        for start, end in sorted(self.breaks):
            if start >= end:
                raise ValueError(f"empty break interval {start}-{end}")
            if start < self.shift_start or end > self.shift_end:
                raise ValueError(f"break {start}-{end} outside shift window")
            if prev_end is not None and start < prev_end:
                raise ValueError("break intervals overlap")
            prev_end = end
        if not all(0 <= d <= 6 for d in self.workdays):
            raise ValueError("workdays must be weekday numbers 0-6")
        self.zone()  # raises UnknownTimezone early

    def zone(self) -> ZoneInfo:
        try:
            return ZoneInfo(self.timezone)
        except (ZoneInfoNotFoundError, ValueError) as exc:
            raise UnknownTimezone(f"cannot resolve zone {self.timezone!r}") from exc

    def shift_seconds(self) -> float:
        return _time_to_s(self.shift_end) - _time_to_s(self.shift_start)

    def break_seconds(self) -> float:
        return sum(_time_to_s(e) - _time_to_s(s) for s, e in self.breaks)


def _time_to_s(t: _dt.time) -> float:
    return t.hour * 3600 + t.minute * 60 + t.second + t.microsecond / 1e6


def _polygon_area(pts: Sequence[tuple[float, float]]) -> float:
    area = 0.0
    n = len(pts)
    for i in range(n):
        x1, y1 = pts[i]
        x2, y2 = pts[(i + 1) % n]
        area += x1 * y2 - x2 * y1
    return area / 2.0


# --------------------------------------------------------------------------
# Timestamp helpers (integer epoch milliseconds)
# --------------------------------------------------------------------------

_minute_base_cache: dict[str, int] = {}


def rfc3339_to_ms(text: str) -> int:
    """Parse an RFC 3339 UTC timestamp to epoch milliseconds."""
    # Fast path for the canonical writer layout "YYYY-MM-DDTHH:MM:SS.mmmZ".
    if len(text) == 24 and text.endswith("Z") and text[10] == "T":
        base = _minute_base_cache.get(text[:16])
        if base is None:
            dt = _dt.datetime(
                int(text[0:4]), int(text[5:7]), int(text[8:10]),
                int(text[11:13]), int(text[14:16]), tzinfo=_dt.timezone.utc,
            )
            base = int(dt.timestamp()) * 1000
            _minute_base_cache[text[:16]] = base
        return base + int(text[17:19]) * 1000 + int(text[20:23])
    return _rfc3339_to_ms_slow(text)


def _rfc3339_to_ms_slow(text: str) -> int:
    iso = text[:-1] + "+00:00" if text.endswith(("Z", "z")) else text
    dt = _dt.datetime.fromisoformat(iso)
    if dt.tzinfo is None:
        raise ValueError(f"timestamp lacks a UTC offset: {text!r}")
    return round(dt.timestamp() * 1000)


_day_prefix_cache: dict[int, str] = {}


def ms_to_rfc3339(ts_ms: int) -> str:
    day, rem = divmod(ts_ms, 86_400_000)
    prefix = _day_prefix_cache.get(day)
    if prefix is None:
        prefix = (_EPOCH + _dt.timedelta(days=day)).date().isoformat() + "T"
        _day_prefix_cache[day] = prefix
    h, rem = divmod(rem, 3_600_000)
    m, rem = divmod(rem, 60_000)
    s, ms = divmod(rem, 1000)
    return f"{prefix}{h:02d}:{m:02d}:{s:02d}.{ms:03d}Z"


def ms_to_datetime(ts_ms: int) -> _dt.datetime:
    return _dt.datetime.fromtimestamp(ts_ms / 1000.0, tz=_dt.timezone.utc)


def datetime_to_ms(dt: _dt.datetime) -> int:
    if dt.tzinfo is None:
        raise ValueError("naive datetimes are ambiguous; attach a timezone")
    return round(dt.timestamp() * 1000)


# --------------------------------------------------------------------------
# Line parsing
# --------------------------------------------------------------------------


def parse_line(line: str | bytes, line_no: int = 0) -> FrameRecord:
    """Parse one stream line, raising MalformedRecord on any violation.

    All field validation happens inside the typed decoder; only the
    timestamp needs a Python-side conversion.
    """
    try:
        obj = _wire_decode(line)
        return FrameRecord(obj.station, rfc3339_to_ms(obj.ts), obj.frame, obj.dets)
    except msgspec.DecodeError as exc:  # includes type/constraint violations
        raise MalformedRecord(line_no, f"invalid record: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise MalformedRecord(line_no, f"bad timestamp: {exc}") from None


def serialize_frame(record: FrameRecord) -> str:
    """Render a record in the canonical line format (inverse of parse_line)."""
    parts = []
    for d in record.detections:
        x, y, w, h = d.box
        parts.append(
            f'{{"cls":"{d.cls.value}","box":[{x:.2f},{y:.2f},{w:.2f},{h:.2f}],'
            f'"conf":{d.confidence:.4f}}}'
        )
    return (
        f'{{"station":"{record.station_id}","ts":"{ms_to_rfc3339(record.ts_ms)}",'
        f'"frame":{record.frame_index},"dets":[{",".join(parts)}]}}'
    )


@dataclass
class ParseStats:
    lines: int = 0
    parsed: int = 0
    malformed: int = 0
    blank: int = 0
    errors: list[str] = field(default_factory=list)

    def record_error(self, exc: MalformedRecord) -> None:
        self.malformed += 1
        if len(self.errors) < 10:
            self.errors.append(str(exc))


def parse_frame_stream(
    lines: Iterable[str | bytes],
    *,
    strict: bool = False,
    max_malformed_ratio: float = 0.01,
    stats: Optional[ParseStats] = None,
) -> Iterator[FrameRecord]:
    """Parse a line-delimited detection stream in input order.

    With strict=False (the default) malformed lines are skipped and counted;
    the stream fails at exhaustion if more than max_malformed_ratio of lines
    were bad. With strict=True the first malformed line raises.
    """
    if stats is None:
        stats = ParseStats()
    for line in lines:
        stats.lines += 1
        stripped = line.strip()
        if not stripped:
            stats.blank += 1
            continue
        try:
            record = parse_line(stripped, stats.lines)
        except MalformedRecord as exc:
            if strict:
                raise
            stats.record_error(exc)
            continue
        stats.parsed += 1
        yield record
    if stats.lines and stats.malformed / stats.lines > max_malformed_ratio:
        raise ExcessiveMalformedInput(stats.malformed, stats.lines, max_malformed_ratio)


# --------------------------------------------------------------------------
# Calendar resolution
# --------------------------------------------------------------------------


class CalendarResolver:
    """Maps epoch-ms instants to Scope using piecewise-constant day segments.

    Segments are built lazily one local day at a time, so monotone streams
    resolve in O(1) amortized; random access falls back to bisection.
    """

    def __init__(self, cal: ShiftCalendar):
        cal.validate()
        self.cal = cal
        self._zone = cal.zone()
        self._segments: list[tuple[int, int, Scope]] = []  # sorted, contiguous
        self._built_days: set[_dt.date] = set()
        self._cursor = 0

    def scope_ms(self, ts_ms: int) -> Scope:
        segs = self._segments
        i = self._cursor
        if i < len(segs):
            start, end, scope = segs[i]
            if start <= ts_ms < end:
                return scope
            if ts_ms >= end:
                i += 1
                while i < len(segs):
                    start, end, scope = segs[i]
                    if ts_ms < end:
                        self._cursor = i
                        if ts_ms >= start:
                            return scope
                        break
                    i += 1
        return self._resolve_cold(ts_ms)

    def _resolve_cold(self, ts_ms: int) -> Scope:
        local_date = ms_to_datetime(ts_ms).astimezone(self._zone).date()
        for d in (local_date - _dt.timedelta(days=1), local_date):
            if d not in self._built_days:
                self._insert_day(d)
        idx = bisect_right(self._segments, ts_ms, key=lambda s: s[0]) - 1
        start, end, scope = self._segments[idx]
        if not (start <= ts_ms < end):  # pragma: no cover - defensive
            raise AssertionError("calendar segment lookup failed")
        self._cursor = idx
        return scope

    def _insert_day(self, day: _dt.date) -> None:
        self._built_days.add(day)
        segs = self.day_segments(day)
        if not self._segments or segs[0][0] >= self._segments[-1][1]:
            self._segments.extend(segs)
        else:
            self._segments = sorted(set(self._segments) | set(segs))

    def day_segments(self, day: _dt.date) -> list[tuple[int, int, Scope]]:
        """Scope segments covering one whole local day, in UTC milliseconds."""
        midnight = self._local_ms(day, _dt.time(0))
        next_midnight = self._local_ms(day + _dt.timedelta(days=1), _dt.time(0))
        if day.weekday() not in self.cal.workdays:
            return [(midnight, next_midnight, Scope.OFF_SHIFT)]
        shift_start = self._local_ms(day, self.cal.shift_start)
        shift_end = self._local_ms(day, self.cal.shift_end)
        segs = [(midnight, shift_start, Scope.OFF_SHIFT)]
        pos = shift_start
        for bs, be in sorted(self.cal.breaks):
            b0 = self._local_ms(day, bs)
            b1 = self._local_ms(day, be)
            if b0 > pos:
                segs.append((pos, b0, Scope.IN_SHIFT))
            segs.append((b0, b1, Scope.BREAK))
            pos = b1
        if pos < shift_end:
            segs.append((pos, shift_end, Scope.IN_SHIFT))
        segs.append((shift_end, next_midnight, Scope.OFF_SHIFT))
        return [s for s in segs if s[0] < s[1]]

    def shift_window_ms(self, day: _dt.date) -> tuple[int, int]:
        return (
            self._local_ms(day, self.cal.shift_start),
            self._local_ms(day, self.cal.shift_end),
        )

    def _local_ms(self, day: _dt.date, t: _dt.time) -> int:
        dt = _dt.datetime.combine(day, t, tzinfo=self._zone)
        return round(dt.timestamp() * 1000)


def scope_of(ts: _dt.datetime | int, cal: ShiftCalendar) -> Scope:
    """Classify one instant as InShift, Break, or OffShift.

    Convenience wrapper over CalendarResolver; resolvers are cached per
    calendar so repeated calls stay cheap.
    """
    ts_ms = ts if isinstance(ts, int) else datetime_to_ms(ts)
    return _resolver_for(cal).scope_ms(ts_ms)


_resolver_cache: dict[ShiftCalendar, CalendarResolver] = {}


def _resolver_for(cal: ShiftCalendar) -> CalendarResolver:
    res = _resolver_cache.get(cal)
    if res is None:
        res = CalendarResolver(cal)
        if len(_resolver_cache) > 64:
            _resolver_cache.clear()
        _resolver_cache[cal] = res
    return res


# --------------------------------------------------------------------------
# Stream validation
# --------------------------------------------------------------------------


@dataclass(slots=True)
class GapEntry:
    station_id: str
    before_ms: int
    after_ms: int

    @property
    def seconds(self) -> float:
        return (self.after_ms - self.before_ms) / 1000.0


class StreamValidator:
    """Per-station ordering checks, box clamping, and gap reporting.

    Gaps are inter-frame spacings above 3x the nominal frame period.
    """

    def __init__(self, cfg: StationConfig, *, strict: bool = True):
        cfg.validate()
        self.cfg = cfg
        self.strict = strict
        self.gaps: list[GapEntry] = []
        self.rejected = 0
        self.dropped_boxes = 0
        self._last_ts: Optional[int] = None
        self._last_idx: Optional[int] = None
        self._gap_limit_ms = round(3 * 1000.0 / cfg.frame_rate)

    def validate(self, frames: Iterable[FrameRecord]) -> Iterator[FrameRecord]:
        for frame in frames:
            out = self.check(frame)
            if out is not None:
                yield out

    def check(self, frame: FrameRecord) -> Optional[FrameRecord]:
        """Validate one record; returns None when a record is rejected."""
        last_ts = self._last_ts
        if last_ts is not None:
            if frame.frame_index <= self._last_idx or frame.ts_ms < last_ts:
                if self.strict:
                    raise NonMonotonicTimestamp(frame.station_id, frame.frame_index)
                self.rejected += 1
                return None
            if frame.ts_ms - last_ts > self._gap_limit_ms:
                self.gaps.append(GapEntry(frame.station_id, last_ts, frame.ts_ms))
        self._last_ts = frame.ts_ms
        self._last_idx = frame.frame_index
        w_img, h_img = self.cfg.image_size
        dets = frame.detections
        for d in dets:
            x, y, w, h = d.box
            if x < 0.0 or y < 0.0 or x + w > w_img or y + h > h_img:
                self._clamp(frame, dets, w_img, h_img)
                break
        return frame

    def _clamp(self, frame: FrameRecord, dets, w_img: float, h_img: float) -> None:
        dropped_here = False
        for i, d in enumerate(dets):
            x, y, w, h = d.box
            if x >= 0 and y >= 0 and x + w <= w_img and y + h <= h_img:
                continue
            x2 = min(x + w, w_img)
            y2 = min(y + h, h_img)
            x = max(x, 0.0)
            y = max(y, 0.0)
            if x2 - x <= 0 or y2 - y <= 0:
                dets[i] = None  # type: ignore[call-overload]
                self.dropped_boxes += 1
                dropped_here = True
            else:
                dets[i] = DetectionBox(d.cls, (x, y, x2 - x, y2 - y), d.confidence)
        if dropped_here:
            frame.detections = [d for d in dets if d is not None]


def validate_stream(
    frames: Iterable[FrameRecord], cfg: StationConfig
) -> Iterator[FrameRecord]:
    """Functional wrapper over StreamValidator (strict mode)."""
    yield from StreamValidator(cfg).validate(frames)
