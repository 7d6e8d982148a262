"""End-to-end analyze engine: parse -> track -> classify -> aggregate.

One pass over the interleaved input stream drives a per-station runner
(tracker state, presence debouncing, tallies). Stations are independent, so
with --jobs > 1 station subsets run in separate processes and the merged
result is identical to a sequential run.
"""

from __future__ import annotations

import gc
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from collections import deque
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Optional, Sequence

from . import __version__
from .analytics import (
    CycleRecord,
    ReportBundle,
    StateTally,
    TallyAccumulator,
    extract_cycles,
    filter_cycles,
    weekly_box_stats,
)
from .config import AnalyticsParams, RunConfig
from .errors import ExcessiveMalformedInput, MalformedRecord
from .ingest import (
    CalendarResolver,
    FrameRecord,
    ParseStats,
    StationConfig,
    StreamValidator,
    ms_to_rfc3339,
    parse_line,
)
from .statemach import (
    PresenceFlags,
    StationStatus,
    StreamingDebouncer,
    classify,
    presence,
)
from .tracker import TrackerParams, TrackerState, tracker_finish, tracker_step


@dataclass
class StationOutcome:
    station_id: str
    counts: dict[str, dict[str, list[int]]]
    cycles: list[CycleRecord]  # pre-filter
    frames_used: int = 0
    rejected_frames: int = 0
    dropped_boxes: int = 0
    gap_count: int = 0
    gaps_preview: list[dict] = field(default_factory=list)
    track_count: int = 0


class StationRunner:
    """Sequential per-station pipeline stage."""

    def __init__(
        self,
        cfg: StationConfig,
        resolver: CalendarResolver,
        tracker_params: TrackerParams,
        analytics_params: AnalyticsParams,
        *,
        strict: bool = False,
        event_sink: Optional[IO[str]] = None,
        timeline_sink: Optional[IO[str]] = None,
    ):
        self.cfg = cfg
        self.params = tracker_params
        self.analytics_params = analytics_params
        self.validator = StreamValidator(cfg, strict=strict)
        self.resolver = resolver
        self.tracker = TrackerState(cfg.station_id, cfg.frame_rate)
        self.debouncer = StreamingDebouncer(analytics_params.debounce_window)
        self.tally = TallyAccumulator(cfg.station_id, resolver.cal.timezone)
        self.events = []
        self.frames_used = 0
        self._scopes: deque = deque()
        self._event_sink = event_sink
        self._timeline_sink = timeline_sink
        # hot-loop bindings
        self._check = self.validator.check
        self._step = tracker_step
        self._presence = presence
        self._scope_ms = self.resolver.scope_ms
        self._scope_push = self._scopes.append
        self._deb_feed = self.debouncer.feed
        self._tracks = self.tracker.tracks

    def feed(self, record: FrameRecord) -> None:
        record = self._check(record)
        if record is None:
            return
        self.frames_used += 1
        ts = record.ts_ms
        _, events = self._step(self.tracker, record, self.params)
        if events:
            self.events.extend(events)
            if self._event_sink is not None:
                self._write_events(events)
        flags = self._presence(self.tracker.tracks, self.cfg, ts)
        self._scope_push(self._scope_ms(ts))
        out = self._deb_feed(flags)
        if out is not None:
            self._emit(out)

    def _emit(self, flags: PresenceFlags) -> None:
        status = classify(flags, self._scopes.popleft())
        self.tally.add(flags.ts_ms, status)
        if self._timeline_sink is not None:
            self._timeline_sink.write(
                f'{{"station":"{flags.station_id}","ts":"{ms_to_rfc3339(flags.ts_ms)}",'
                f'"status":"{StationStatus(status).name.lower()}"}}\n'
            )

    def _write_events(self, events) -> None:
        for ev in events:
            self._event_sink.write(
                f'{{"station":"{ev.station_id}","track_id":{ev.track_id},'
                f'"cls":"{ev.cls.value}","kind":"{ev.kind.value}",'
                f'"ts":"{ms_to_rfc3339(ev.ts_ms)}"}}\n'
            )

    def finish(self) -> StationOutcome:
        tail = tracker_finish(self.tracker)
        if tail:
            self.events.extend(tail)
            if self._event_sink is not None:
                self._write_events(tail)
        for flags in self.debouncer.flush():
            self._emit(flags)
        cycles = extract_cycles(self.events)
        outcome = StationOutcome(
            station_id=self.cfg.station_id,
            counts=self.tally.raw_counts(),
            cycles=cycles,
            frames_used=self.frames_used,
            rejected_frames=self.validator.rejected,
            dropped_boxes=self.validator.dropped_boxes,
            gap_count=len(self.validator.gaps),
            gaps_preview=[
                {
                    "after": ms_to_rfc3339(g.before_ms),
                    "until": ms_to_rfc3339(g.after_ms),
                    "seconds": g.seconds,
                }
                for g in self.validator.gaps[:100]
            ],
            track_count=self.tracker.next_id - 1,
        )
        return outcome


@dataclass
class RunManifest:
    config_hash: str
    inputs: list[str]
    lines_total: int = 0
    blank_lines: int = 0
    malformed_lines: int = 0
    out_of_scope_records: int = 0
    used_records: int = 0
    parse_errors: list[str] = field(default_factory=list)
    stations: dict[str, dict] = field(default_factory=dict)
    version: str = __version__

    def reconciles(self) -> bool:
        return (
            self.lines_total
            == self.used_records
            + self.malformed_lines
            + self.out_of_scope_records
            + self.blank_lines
        )

    def as_json_obj(self) -> dict:
        return {
            "version": self.version,
            "config_hash": self.config_hash,
            "inputs": self.inputs,
            "records": {
                "lines_total": self.lines_total,
                "blank_lines": self.blank_lines,
                "malformed_lines": self.malformed_lines,
                "out_of_scope_records": self.out_of_scope_records,
                "used_records": self.used_records,
                "reconciles": self.reconciles(),
            },
            "parse_errors": self.parse_errors,
            "stations": self.stations,
        }


def _config_hash(config: RunConfig) -> str:
    blob = repr(config).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@contextmanager
def suspend_gc():
    """Pause cyclic GC inside allocation-heavy streaming loops.

    Everything allocated per frame is acyclic and dies by refcount, so the
    collector only adds scan overhead there.
    """
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if was_enabled:
            gc.enable()


def _iter_lines(paths: Sequence[str | Path]):
    for path in paths:
        with open(path, "rb") as fh:
            yield from fh


def run_station_subset(
    config: RunConfig,
    inputs: Sequence[str],
    subset: Optional[set[str]] = None,
    *,
    strict: bool = False,
    event_sink: Optional[IO[str]] = None,
    timeline_sink: Optional[IO[str]] = None,
) -> tuple[list[StationOutcome], ParseStats, int, int]:
    """One pass over the inputs handling only stations in `subset`.

    Returns (outcomes, parse stats, out_of_scope_count, skipped_other_subset).
    Parse statistics always cover the whole file, so any subset sees the
    same totals.
    """
    resolver = CalendarResolver(config.calendar)
    runners: dict[str, StationRunner] = {}
    for st in config.stations:
        if subset is None or st.station_id in subset:
            runners[st.station_id] = StationRunner(
                st, resolver, config.tracker, config.analytics,
                strict=strict, event_sink=event_sink, timeline_sink=timeline_sink,
            )
    known = {st.station_id for st in config.stations}
    stats = ParseStats()
    out_of_scope = 0
    other_subset = 0
    max_ratio = 0.01
    get_runner = runners.get
    with suspend_gc():
        for raw in _iter_lines(inputs):
            stats.lines += 1
            try:
                record = parse_line(raw, stats.lines)
            except MalformedRecord as exc:
                if not raw.strip():
                    stats.blank += 1
                    continue
                if strict:
                    raise
                stats.record_error(exc)
                continue
            stats.parsed += 1
            runner = get_runner(record.station_id)
            if runner is None:
                if record.station_id in known:
                    other_subset += 1
                else:
                    out_of_scope += 1
                continue
            runner.feed(record)
    if stats.lines and stats.malformed / stats.lines > max_ratio:
        raise ExcessiveMalformedInput(stats.malformed, stats.lines, max_ratio)
    outcomes = [runners[k].finish() for k in sorted(runners)]
    return outcomes, stats, out_of_scope, other_subset


def _pool_worker(args) -> tuple[list[StationOutcome], ParseStats, int, int]:
    config, inputs, subset, strict = args
    return run_station_subset(config, inputs, subset, strict=strict)


def analyze_run(
    config: RunConfig,
    inputs: Sequence[str | Path],
    out_dir: str | Path,
    *,
    jobs: int = 1,
    strict: bool = False,
    emit_timeline: bool = False,
    emit_events: bool = False,
) -> RunManifest:
    """Run the full pipeline and write the report bundle to out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    input_strs = [str(p) for p in inputs]
    station_ids = sorted(st.station_id for st in config.stations)
    if emit_timeline or emit_events:
        jobs = 1  # side-channel sinks need the strictly ordered single pass

    event_sink = open(out / "track_events.ndjson", "w", encoding="utf-8") if emit_events else None
    timeline_sink = open(out / "timeline.ndjson", "w", encoding="utf-8") if emit_timeline else None
    try:
        if jobs <= 1 or len(station_ids) <= 1:
            outcomes, stats, oos, _ = run_station_subset(
                config, input_strs, None, strict=strict,
                event_sink=event_sink, timeline_sink=timeline_sink,
            )
        else:
            groups: list[set[str]] = [set() for _ in range(min(jobs, len(station_ids)))]
            for i, sid in enumerate(station_ids):
                groups[i % len(groups)].add(sid)
            outcomes = []
            stats = None
            oos = 0
            with ProcessPoolExecutor(max_workers=len(groups)) as pool:
                for got, st, o, _ in pool.map(
                    _pool_worker,
                    [(config, input_strs, g, strict) for g in groups],
                ):
                    outcomes.extend(got)
                    if stats is None:  # identical in every worker
                        stats = st
                        oos = o
            outcomes.sort(key=lambda r: r.station_id)
    finally:
        if event_sink is not None:
            event_sink.close()
        if timeline_sink is not None:
            timeline_sink.close()

    manifest = _write_outputs(config, outcomes, stats, oos, input_strs, out)
    return manifest


def _write_outputs(
    config: RunConfig,
    outcomes: list[StationOutcome],
    stats: ParseStats,
    out_of_scope: int,
    inputs: list[str],
    out: Path,
) -> RunManifest:
    tz = config.calendar.timezone
    min_cycle = config.analytics.min_cycle_seconds
    tallies: list[StateTally] = []
    kept_cycles: list[CycleRecord] = []
    weekly: dict[str, dict] = {}
    for oc in outcomes:
        for kind, by_period in oc.counts.items():
            for period in sorted(by_period):
                tallies.append(
                    StateTally(oc.station_id, kind, period, tuple(by_period[period]))
                )
        cycles = filter_cycles(oc.cycles, min_cycle)
        kept_cycles.extend(cycles)
        if cycles:
            weekly[oc.station_id] = weekly_box_stats(cycles, tz)

    bundle = ReportBundle(
        tallies=tallies,
        cycles=kept_cycles,
        weekly=weekly,
        meta={
            "stations": [oc.station_id for oc in outcomes],
            "min_cycle_seconds": min_cycle,
            "debounce_window": config.analytics.debounce_window,
            "timezone": tz,
        },
    )
    from .analytics import write_report

    write_report(bundle, out)

    manifest = RunManifest(
        config_hash=_config_hash(config),
        inputs=inputs,
        lines_total=stats.lines,
        blank_lines=stats.blank,
        malformed_lines=stats.malformed,
        out_of_scope_records=out_of_scope,
        used_records=sum(oc.frames_used + oc.rejected_frames for oc in outcomes),
        parse_errors=stats.errors,
    )
    for oc in outcomes:
        manifest.stations[oc.station_id] = {
            "frames": oc.frames_used,
            "rejected_frames": oc.rejected_frames,
            "dropped_boxes": oc.dropped_boxes,
            "tracks": oc.track_count,
            "cycles_total": len(oc.cycles),
            "cycles_kept": sum(
                1 for c in oc.cycles if c.duration_s >= config.analytics.min_cycle_seconds
            ),
            "gaps": oc.gap_count,
            "gaps_preview": oc.gaps_preview[:10],
        }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest.as_json_obj(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    cache = {
        "timezone": tz,
        "stations": {
            oc.station_id: {
                "counts": oc.counts,
                "cycles": [
                    [str(c.track_id), c.start_ms, c.end_ms] for c in oc.cycles
                ],
            }
            for oc in outcomes
        },
    }
    with open(out / "timeline_cache.json", "w", encoding="utf-8") as fh:
        json.dump(cache, fh, sort_keys=True)
        fh.write("\n")
    return manifest


def rerender_report(
    cache_dir: str | Path,
    out_dir: str | Path,
    *,
    min_cycle_seconds: Optional[float] = None,
) -> None:
    """Rebuild the report bundle from a cached timeline, optionally with a
    different cycle filter."""
    cache_path = Path(cache_dir) / "timeline_cache.json"
    with open(cache_path, "r", encoding="utf-8") as fh:
        cache = json.load(fh)
    tz = cache["timezone"]
    tallies = []
    cycles_all = []
    for sid in sorted(cache["stations"]):
        entry = cache["stations"][sid]
        for kind, by_period in entry["counts"].items():
            for period in sorted(by_period):
                tallies.append(
                    StateTally(sid, kind, period, tuple(by_period[period]))
                )
        for track_id, start_ms, end_ms in entry["cycles"]:
            cycles_all.append(CycleRecord(track_id, sid, start_ms, end_ms))
    min_cycle = 120.0 if min_cycle_seconds is None else min_cycle_seconds
    kept = filter_cycles(cycles_all, min_cycle)
    weekly = {}
    for sid in sorted({c.station_id for c in kept}):
        weekly[sid] = weekly_box_stats([c for c in kept if c.station_id == sid], tz)
    bundle = ReportBundle(
        tallies=tallies,
        cycles=kept,
        weekly=weekly,
        meta={"rerendered_from": str(cache_path), "min_cycle_seconds": min_cycle, "timezone": tz},
    )
    from .analytics import write_report

    write_report(bundle, Path(out_dir))
