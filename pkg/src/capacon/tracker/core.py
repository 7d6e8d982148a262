"""Track lifecycle management and frame-to-track association.

The per-track Kalman step runs through the compiled kernel when the
_kalmanc extension is available; the pure-Python fallback is
formula-identical and pinned to it by tests.
"""

from __future__ import annotations

import enum
from array import array
from dataclasses import dataclass, field
from typing import Optional, Sequence

_INF = float("inf")

from ..errors import DegenerateBox, OutOfOrderFrame
from ..ingest import DetectionBox, FrameRecord, ObjectClass
from .assignment import solve_assignment
from .kalman import (
    KalmanState,
    fast_cov_predict,
    fast_cov_predict_update,
    fast_initiate,
    fast_noise_terms,
    fast_predict_mean,
    fast_to_state,
)

try:
    from . import _kalmanc
except ImportError:  # pragma: no cover - build without the extension
    _kalmanc = None

# Prediction horizon cap in frame units; unbounded extrapolation across
# stream gaps produces absurd boxes.
_MAX_PREDICT_FRAMES = 10.0
_MIN_PREDICT_FRAMES = 1e-9


class TrackStatus(enum.IntEnum):
    TENTATIVE = 0
    CONFIRMED = 1
    DELETED = 2


class EventKind(enum.Enum):
    STARTED = "started"
    CONFIRMED = "confirmed"
    ENDED = "ended"


@dataclass(frozen=True, slots=True)
class TrackEvent:
    kind: EventKind
    track_id: int
    cls: ObjectClass
    station_id: str
    ts_ms: int


@dataclass(frozen=True)
class TrackerParams:
    iou_gate: float = 0.3
    max_misses: int = 5
    min_hits: int = 3
    pos_std_factor: float = 1.0 / 20.0
    vel_std_factor: float = 1.0 / 160.0

    def validate(self) -> None:
        if not 0 < self.iou_gate <= 1:
            raise ValueError("iou_gate must lie in (0, 1]")
        if self.max_misses < 1 or self.min_hits < 1:
            raise ValueError("max_misses and min_hits must be >= 1")
        if self.pos_std_factor <= 0 or self.vel_std_factor <= 0:
            raise ValueError("noise factors must be positive")


class Track:
    """One tracked object; mean/cov use the factorized channel layout.

    qp/qv hold the per-frame process-noise terms between the mean-predict
    pass and the deferred covariance operation.
    """

    __slots__ = (
        "track_id", "cls", "station_id", "status", "hits", "misses",
        "first_seen_ms", "last_seen_ms", "mean", "cov", "qp", "qv",
    )

    def __init__(self, track_id: int, cls: ObjectClass, station_id: str,
                 ts_ms: int, mean, cov):
        self.track_id = track_id
        self.cls = cls
        self.station_id = station_id
        self.status = TrackStatus.TENTATIVE
        self.hits = 1
        self.misses = 0
        self.first_seen_ms = ts_ms
        self.last_seen_ms = ts_ms
        # contiguous buffers so the compiled kernel can view them
        self.mean = mean if type(mean) is array else array("d", mean)
        self.cov = cov if type(cov) is array else array("d", cov)
        self.qp = 0.0
        self.qv = 0.0

    def box(self) -> tuple[float, float, float, float]:
        m = self.mean
        w = m[2] * m[3]
        return (m[0] - w / 2.0, m[1] - m[3] / 2.0, w, m[3])

    def center(self) -> tuple[float, float]:
        return (self.mean[0], self.mean[1])

    def kalman_state(self) -> KalmanState:
        return fast_to_state(self.mean, self.cov)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return (
            f"Track(id={self.track_id}, cls={self.cls.value}, "
            f"status={self.status.name}, hits={self.hits}, misses={self.misses})"
        )


@dataclass
class TrackerState:
    """Per-station tracker state; strictly sequential per station."""

    station_id: str
    frame_rate: float
    tracks: list[Track] = field(default_factory=list)
    next_id: int = 1
    last_ts_ms: Optional[int] = None


def iou(box_a: Sequence[float], box_b: Sequence[float]) -> float:
    """Intersection-over-union of two (x, y, w, h) boxes."""
    ax, ay, aw, ah = box_a
    bx, by, bw, bh = box_b
    if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
        raise DegenerateBox(f"boxes must have positive extent: {box_a}, {box_b}")
    ix = (ax + aw if ax + aw < bx + bw else bx + bw) - (ax if ax > bx else bx)
    if ix <= 0:
        return 0.0
    iy = (ay + ah if ay + ah < by + bh else by + bh) - (ay if ay > by else by)
    if iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (aw * ah + bw * bh - inter)


def _safe_iou(box_a, box_b) -> float:
    """IoU that treats a degenerate (predicted) box as non-overlapping.

    Association never raises: a track whose prediction collapsed simply
    cannot match and will coast out.
    """
    ax, ay, aw, ah = box_a
    bx, by, bw, bh = box_b
    if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
        return 0.0
    ix = (ax + aw if ax + aw < bx + bw else bx + bw) - (ax if ax > bx else bx)
    if ix <= 0:
        return 0.0
    iy = (ay + ah if ay + ah < by + bh else by + bh) - (ay if ay > by else by)
    if iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (aw * ah + bw * bh - inter)


def _gated_match(mean, box: tuple, gate: float) -> bool:
    """True when the track's predicted box overlaps `box` at or above the
    gate. Division-free; degenerate predictions never match."""
    ah = mean[3]
    aw = mean[2] * ah
    if aw <= 0.0 or ah <= 0.0:
        return False
    ax = mean[0] - aw * 0.5
    ay = mean[1] - ah * 0.5
    bx, by, bw, bh = box
    ix = (ax + aw if ax + aw < bx + bw else bx + bw) - (ax if ax > bx else bx)
    if ix <= 0.0:
        return False
    iy = (ay + ah if ay + ah < by + bh else by + bh) - (ay if ay > by else by)
    if iy <= 0.0:
        return False
    inter = ix * iy
    return inter >= gate * (aw * ah + bw * bh - inter)


def _step_track_py(mean, cov, dt, psf, vsf, gate, has_det, bx, by, bw, bh) -> bool:
    """Pure-Python twin of _kalmanc.step_track."""
    qp, qv = fast_noise_terms(mean, psf, vsf)
    fast_predict_mean(mean, dt)
    if has_det and _gated_match(mean, (bx, by, bw, bh), gate):
        fast_cov_predict_update(
            mean, cov, dt, qp, qv,
            bx + bw * 0.5, by + bh * 0.5, bw / bh, bh, psf,
        )
        return True
    fast_cov_predict(cov, dt, qp, qv)
    return False


def _predict_mean_py(mean, dt, psf, vsf) -> tuple[float, float]:
    """Pure-Python twin of _kalmanc.predict_mean."""
    qp, qv = fast_noise_terms(mean, psf, vsf)
    fast_predict_mean(mean, dt)
    return qp, qv


if _kalmanc is not None:
    _step_track = _kalmanc.step_track
    _predict_mean = _kalmanc.predict_mean
    _cov_predict = _kalmanc.cov_predict
    _cov_predict_update = _kalmanc.cov_predict_update
else:  # pragma: no cover - exercised only without the built extension
    _step_track = _step_track_py
    _predict_mean = _predict_mean_py
    _cov_predict = fast_cov_predict
    _cov_predict_update = fast_cov_predict_update


_WORKER = ObjectClass.WORKER


def associate(
    tracks: Sequence[Track],
    dets: Sequence[DetectionBox],
    params: TrackerParams,
) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    """IoU-gated optimal matching, done independently per object class.

    Returns (matches, unmatched_track_indices, unmatched_det_indices); the
    three outputs partition the inputs exactly. Output order is worker
    entries before chair entries, ascending within each class.
    """
    n_tracks = len(tracks)
    n_dets = len(dets)
    if n_tracks == 0 or n_dets == 0:
        return [], list(range(n_tracks)), list(range(n_dets))

    wt: list[int] = []
    ct: list[int] = []
    for i in range(n_tracks):
        (wt if tracks[i].cls is _WORKER else ct).append(i)
    wd: list[int] = []
    cd: list[int] = []
    for j in range(n_dets):
        (wd if dets[j].cls is _WORKER else cd).append(j)

    gate = params.iou_gate
    matches: list[tuple[int, int]] = []
    unmatched_t: list[int] = []
    unmatched_d: list[int] = []
    for t_idx, d_idx in ((wt, wd), (ct, cd)):
        if not t_idx:
            unmatched_d.extend(d_idx)
            continue
        if not d_idx:
            unmatched_t.extend(t_idx)
            continue
        if len(t_idx) == 1 and len(d_idx) == 1:
            ti = t_idx[0]
            dj = d_idx[0]
            if _gated_match(tracks[ti].mean, dets[dj].box, gate):
                matches.append((ti, dj))
            else:
                unmatched_t.append(ti)
                unmatched_d.append(dj)
            continue
        cost = []
        for i in t_idx:
            bt = tracks[i].box()
            row = []
            for j in d_idx:
                v = _safe_iou(bt, dets[j].box)
                row.append(1.0 - v if v >= gate else _INF)
            cost.append(row)
        solved = solve_assignment(cost)
        hit_t = 0
        hit_d = 0
        for ti, dj in solved:
            matches.append((t_idx[ti], d_idx[dj]))
            hit_t |= 1 << ti
            hit_d |= 1 << dj
        for k, i in enumerate(t_idx):
            if not hit_t & (1 << k):
                unmatched_t.append(i)
        for k, j in enumerate(d_idx):
            if not hit_d & (1 << k):
                unmatched_d.append(j)

    return matches, unmatched_t, unmatched_d


def _mark_matched(t: Track, ts: int, params: TrackerParams,
                  events: list[TrackEvent]) -> None:
    t.hits += 1
    t.misses = 0
    t.last_seen_ms = ts
    if t.status is TrackStatus.TENTATIVE and t.hits >= params.min_hits:
        t.status = TrackStatus.CONFIRMED
        events.append(
            TrackEvent(EventKind.CONFIRMED, t.track_id, t.cls, t.station_id, ts)
        )


def _mark_missed(t: Track, params: TrackerParams,
                 events: list[TrackEvent]) -> bool:
    """Lifecycle bookkeeping for an unmatched track; True when deleted."""
    if t.status is TrackStatus.TENTATIVE:
        t.status = TrackStatus.DELETED  # silent discard
        return True
    t.misses += 1
    t.hits = 0
    if t.misses > params.max_misses:
        t.status = TrackStatus.DELETED
        events.append(
            TrackEvent(EventKind.ENDED, t.track_id, t.cls, t.station_id,
                       t.last_seen_ms)
        )
        return True
    return False


def _spawn_track(state: TrackerState, d: DetectionBox, ts: int,
                 params: TrackerParams, events: list[TrackEvent]) -> None:
    x, y, w, h = d.box
    mean, cov = fast_initiate(
        x + w * 0.5, y + h * 0.5, w / h, h,
        params.pos_std_factor, params.vel_std_factor,
    )
    t = Track(state.next_id, d.cls, state.station_id, ts, mean, cov)
    state.next_id += 1
    state.tracks.append(t)
    events.append(
        TrackEvent(EventKind.STARTED, t.track_id, t.cls, t.station_id, ts)
    )
    if params.min_hits <= 1:
        t.status = TrackStatus.CONFIRMED
        events.append(
            TrackEvent(EventKind.CONFIRMED, t.track_id, t.cls, t.station_id, ts)
        )


def tracker_step(
    state: TrackerState,
    frame: FrameRecord,
    params: TrackerParams,
) -> tuple[TrackerState, list[TrackEvent]]:
    """Advance one frame: predict, associate, update lifecycles.

    Events are emitted in a fixed order (confirmations, endings, starts),
    so identical inputs always produce identical event logs. Mean
    prediction happens before association; the covariance work is deferred
    into the matched/missed handling so each track pays for it once.
    """
    if frame.station_id != state.station_id:
        raise ValueError(
            f"frame for station {frame.station_id!r} fed to tracker "
            f"{state.station_id!r}"
        )
    ts = frame.ts_ms
    last = state.last_ts_ms
    tracks = state.tracks
    dt = 0.0
    if last is not None:
        if ts < last:
            raise OutOfOrderFrame(
                f"station {state.station_id!r}: frame at {ts} after {last}"
            )
        dt = (ts - last) * 0.001 * state.frame_rate
        if dt > _MAX_PREDICT_FRAMES:
            dt = _MAX_PREDICT_FRAMES
        elif dt < _MIN_PREDICT_FRAMES:
            dt = _MIN_PREDICT_FRAMES
    state.last_ts_ms = ts

    events: list[TrackEvent] = []
    dets = frame.detections
    psf = params.pos_std_factor
    vsf = params.vel_std_factor

    # Fast path: at most one track and one detection per class, which is
    # the steady state of a station feed.
    wt = ct = None
    wd = cd = None
    simple = True
    for t in tracks:
        if t.cls is _WORKER:
            if wt is None:
                wt = t
            else:
                simple = False
                break
        elif ct is None:
            ct = t
        else:
            simple = False
            break
    if simple:
        for d in dets:
            if d.cls is _WORKER:
                if wd is None:
                    wd = d
                else:
                    simple = False
                    break
            elif cd is None:
                cd = d
            else:
                simple = False
                break

    any_deleted = False
    if simple:
        gate = params.iou_gate
        w_hit = c_hit = False
        if wt is not None:
            if wd is not None:
                bx, by, bw, bh = wd.box
                w_hit = _step_track(wt.mean, wt.cov, dt, psf, vsf, gate,
                                    True, bx, by, bw, bh)
            else:
                _step_track(wt.mean, wt.cov, dt, psf, vsf, gate,
                            False, 0.0, 0.0, 1.0, 1.0)
        if ct is not None:
            if cd is not None:
                bx, by, bw, bh = cd.box
                c_hit = _step_track(ct.mean, ct.cov, dt, psf, vsf, gate,
                                    True, bx, by, bw, bh)
            else:
                _step_track(ct.mean, ct.cov, dt, psf, vsf, gate,
                            False, 0.0, 0.0, 1.0, 1.0)
        if w_hit:
            _mark_matched(wt, ts, params, events)
        if c_hit:
            _mark_matched(ct, ts, params, events)
        if wt is not None and not w_hit:
            any_deleted |= _mark_missed(wt, params, events)
        if ct is not None and not c_hit:
            any_deleted |= _mark_missed(ct, params, events)
        if wd is not None and not w_hit:
            _spawn_track(state, wd, ts, params, events)
        if cd is not None and not c_hit:
            _spawn_track(state, cd, ts, params, events)
    else:
        for t in tracks:
            t.qp, t.qv = _predict_mean(t.mean, dt, psf, vsf)
        matches, unmatched_t, unmatched_d = associate(tracks, dets, params)
        for ti, di in matches:
            t = tracks[ti]
            x, y, w, h = dets[di].box
            _cov_predict_update(
                t.mean, t.cov, dt, t.qp, t.qv,
                x + w * 0.5, y + h * 0.5, w / h, h, psf,
            )
            _mark_matched(t, ts, params, events)
        for ti in unmatched_t:
            t = tracks[ti]
            if t.status is not TrackStatus.TENTATIVE:
                _cov_predict(t.cov, dt, t.qp, t.qv)
            any_deleted |= _mark_missed(t, params, events)
        for di in unmatched_d:
            _spawn_track(state, dets[di], ts, params, events)

    if any_deleted:
        state.tracks = [t for t in state.tracks if t.status is not TrackStatus.DELETED]
    return state, events


def tracker_finish(state: TrackerState) -> list[TrackEvent]:
    """Close out a stream: end every confirmed track at its last sighting."""
    events = []
    for t in state.tracks:
        if t.status is TrackStatus.CONFIRMED:
            events.append(
                TrackEvent(
                    EventKind.ENDED, t.track_id, t.cls, t.station_id,
                    t.last_seen_ms,
                )
            )
        t.status = TrackStatus.DELETED
    state.tracks = []
    return events
