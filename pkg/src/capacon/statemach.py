"""Per-frame station state classification.

A station frame is Productive, Unproductive, Downtime, or Idle depending on
which object classes are present; frames outside the working calendar are
Excluded. Presence is derived from confirmed tracks only, with the box
center tested against the station ROI.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

from .ingest import ObjectClass, Scope, StationConfig
from .tracker import Track, TrackStatus


class StationStatus(enum.IntEnum):
    PRODUCTIVE = 0
    UNPRODUCTIVE = 1
    DOWNTIME = 2
    IDLE = 3
    EXCLUDED = 4


@dataclass(slots=True)
class PresenceFlags:
    station_id: str
    ts_ms: int
    worker_present: bool
    chair_present: bool


def point_in_polygon(x: float, y: float, polygon: Sequence[tuple[float, float]]) -> bool:
    """Ray-casting test; points exactly on an edge count as inside."""
    inside = False
    n = len(polygon)
    x1, y1 = polygon[-1]
    for i in range(n):
        x2, y2 = polygon[i]
        if (y1 > y) != (y2 > y):
            t = (y - y1) / (y2 - y1)
            xi = x1 + t * (x2 - x1)
            if x == xi:
                return True
            if x < xi:
                inside = not inside
        elif y1 == y == y2 and min(x1, x2) <= x <= max(x1, x2):
            return True
        x1, y1 = x2, y2
    return inside


def presence(tracks: Iterable[Track], cfg: StationConfig, ts_ms: int) -> PresenceFlags:
    """Presence flags from live confirmed tracks whose center lies in the ROI.

    A confirmed track that missed the current frame still counts while it
    coasts on its prediction; a detector dropout therefore does not flicker
    the station state.
    """
    worker = False
    chair = False
    roi = cfg.roi
    if roi is None:
        w_img, h_img = cfg.image_size
        for t in tracks:
            if t.status is TrackStatus.CONFIRMED:
                cx, cy = t.mean[0], t.mean[1]
                if 0 <= cx <= w_img and 0 <= cy <= h_img:
                    if t.cls is ObjectClass.WORKER:
                        worker = True
                    else:
                        chair = True
    else:
        for t in tracks:
            if t.status is TrackStatus.CONFIRMED:
                if point_in_polygon(t.mean[0], t.mean[1], roi):
                    if t.cls is ObjectClass.WORKER:
                        worker = True
                    else:
                        chair = True
    return PresenceFlags(cfg.station_id, ts_ms, worker, chair)


def classify(flags: PresenceFlags, scope: Scope) -> StationStatus:
    """Station state lookup over (worker, chair) presence; total function."""
    if scope is not Scope.IN_SHIFT:
        return StationStatus.EXCLUDED
    if flags.worker_present:
        return StationStatus.PRODUCTIVE if flags.chair_present else StationStatus.DOWNTIME
    return StationStatus.UNPRODUCTIVE if flags.chair_present else StationStatus.IDLE


def debounce(flags: Sequence[PresenceFlags], window: int = 3) -> list[PresenceFlags]:
    """Majority-filter both presence booleans over a centered window.

    Edges use whichever frames exist; on an exact tie the original value is
    kept, so a value agreeing with both neighbors never changes and
    window=1 is the identity.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be an odd integer >= 1")
    if window == 1 or len(flags) <= 1:
        return list(flags)
    half = window // 2
    n = len(flags)
    out = []
    for i in range(n):
        lo = i - half
        if lo < 0:
            lo = 0
        hi = i + half + 1
        if hi > n:
            hi = n
        span = hi - lo
        w_cnt = 0
        c_cnt = 0
        for k in range(lo, hi):
            f = flags[k]
            if f.worker_present:
                w_cnt += 1
            if f.chair_present:
                c_cnt += 1
        f = flags[i]
        worker = _majority(w_cnt, span, f.worker_present)
        chair = _majority(c_cnt, span, f.chair_present)
        if worker == f.worker_present and chair == f.chair_present:
            out.append(f)
        else:
            out.append(PresenceFlags(f.station_id, f.ts_ms, worker, chair))
    return out


def _majority(count: int, span: int, original: bool) -> bool:
    double = 2 * count
    if double > span:
        return True
    if double < span:
        return False
    return original


class StreamingDebouncer:
    """Streaming equivalent of debounce() with a half-window emission lag.

    Frame i becomes final once frame i + window//2 has arrived (or the
    stream ends); feed() returns at most one finalized frame per call and
    flush() drains the tail. Output over a whole stream is identical to the
    batch debounce().
    """

    def __init__(self, window: int = 3):
        if window < 1 or window % 2 == 0:
            raise ValueError("window must be an odd integer >= 1")
        self.window = window
        self._half = window // 2
        self._buf: deque[PresenceFlags] = deque()
        self._buf_start = 0  # absolute index of _buf[0]
        self._next_emit = 0
        self._arrived = 0

    def feed(self, flags: PresenceFlags) -> Optional[PresenceFlags]:
        if self.window == 1:
            return flags
        if self.window == 3:
            return self._feed3(flags)
        self._buf.append(flags)
        self._arrived += 1
        if self._next_emit <= self._arrived - 1 - self._half:
            return self._emit_one()
        return None

    def _feed3(self, flags: PresenceFlags) -> Optional[PresenceFlags]:
        buf = self._buf
        buf.append(flags)
        self._arrived += 1
        n = len(buf)
        if n < 3:
            if n == 2:
                # Head frame: its 2-wide window either agrees with it or
                # ties, and ties keep the original, so it passes unchanged.
                self._next_emit += 1
                return buf[0]
            return None
        a, b, c = buf
        buf.popleft()
        self._next_emit += 1
        self._buf_start += 1
        worker = (a.worker_present + b.worker_present + c.worker_present) >= 2
        chair = (a.chair_present + b.chair_present + c.chair_present) >= 2
        if worker == b.worker_present and chair == b.chair_present:
            return b
        return PresenceFlags(b.station_id, b.ts_ms, worker, chair)

    def _emit_one(self) -> PresenceFlags:
        i = self._next_emit
        half = self._half
        lo = i - half
        if lo < 0:
            lo = 0
        hi = i + half
        last = self._arrived - 1
        if hi > last:
            hi = last
        lo -= self._buf_start
        hi -= self._buf_start
        buf = self._buf
        w_cnt = 0
        c_cnt = 0
        for k in range(lo, hi + 1):
            b = buf[k]
            if b.worker_present:
                w_cnt += 1
            if b.chair_present:
                c_cnt += 1
        span = hi - lo + 1
        f = buf[i - self._buf_start]
        worker = _majority(w_cnt, span, f.worker_present)
        chair = _majority(c_cnt, span, f.chair_present)
        self._next_emit += 1
        while self._buf_start < self._next_emit - half:
            buf.popleft()
            self._buf_start += 1
        if worker == f.worker_present and chair == f.chair_present:
            return f
        return PresenceFlags(f.station_id, f.ts_ms, worker, chair)

    def flush(self) -> list[PresenceFlags]:
        out = []
        while self._next_emit < self._arrived:
            out.append(self._emit_one())
        return out
