"""YAML run-configuration and scenario-script loading."""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .errors import ConfigError, InvalidScript
from .ingest import ShiftCalendar, StationConfig, rfc3339_to_ms
from .simgen import NoiseModel, ScenarioScript, ScriptInterval
from .tracker import TrackerParams


@dataclass(frozen=True)
class AnalyticsParams:
    min_cycle_seconds: float = 120.0
    debounce_window: int = 3

    def validate(self) -> None:
        if self.min_cycle_seconds < 0:
            raise ValueError("min_cycle_seconds must be non-negative")
        if self.debounce_window < 1 or self.debounce_window % 2 == 0:
            raise ValueError("debounce_window must be an odd integer >= 1")


@dataclass(frozen=True)
class RunConfig:
    stations: tuple[StationConfig, ...]
    calendar: ShiftCalendar
    tracker: TrackerParams = TrackerParams()
    analytics: AnalyticsParams = AnalyticsParams()
    io: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not self.stations:
            raise ConfigError("config lists no stations")
        ids = [s.station_id for s in self.stations]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate station ids in config: {sorted(ids)}")
        try:
            for s in self.stations:
                s.validate()
            self.calendar.validate()
            self.tracker.validate()
            self.analytics.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        paths = [str(p) for p in self.io.get("input", [])]
        out = self.io.get("out")
        if out is not None:
            paths.append(str(out))
        if len(set(paths)) != len(paths):
            raise ConfigError("configured io paths must be distinct")

    def station(self, station_id: str) -> Optional[StationConfig]:
        for s in self.stations:
            if s.station_id == station_id:
                return s
        return None


def _parse_time(value: Any) -> _dt.time:
    if isinstance(value, _dt.time):
        return value
    if isinstance(value, str):
        return _dt.time.fromisoformat(value)
    raise ConfigError(f"cannot parse time of day from {value!r}")


def _parse_calendar(obj: dict) -> ShiftCalendar:
    try:
        breaks = tuple(
            (_parse_time(b[0]), _parse_time(b[1])) for b in obj.get("breaks", [])
        )
        workdays = obj.get("workdays")
        return ShiftCalendar(
            shift_start=_parse_time(obj["shift_start"]),
            shift_end=_parse_time(obj["shift_end"]),
            breaks=breaks,
            workdays=frozenset(range(7)) if workdays is None else frozenset(workdays),
            timezone=obj.get("timezone", "UTC"),
        )
    except (KeyError, IndexError, TypeError) as exc:
        raise ConfigError(f"bad calendar section: {exc!r}") from None


def _parse_station(obj: dict) -> StationConfig:
    try:
        roi = obj.get("roi")
        return StationConfig(
            station_id=str(obj["station_id"]),
            roi=tuple((float(x), float(y)) for x, y in roi) if roi else None,
            frame_rate=float(obj.get("frame_rate", 0.3)),
            image_size=tuple(obj.get("image_size", (1280, 720))),  # type: ignore[arg-type]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad station section: {exc!r}") from None


def parse_config(obj: dict) -> RunConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config document must be a mapping")
    stations = tuple(_parse_station(s) for s in obj.get("stations", []))
    calendar = _parse_calendar(obj.get("calendar", {}))
    tracker_obj = obj.get("tracker", {}) or {}
    analytics_obj = obj.get("analytics", {}) or {}
    try:
        tracker = TrackerParams(**tracker_obj)
        analytics = AnalyticsParams(**analytics_obj)
    except TypeError as exc:
        raise ConfigError(f"bad tracker/analytics section: {exc}") from None
    cfg = RunConfig(
        stations=stations,
        calendar=calendar,
        tracker=tracker,
        analytics=analytics,
        io=obj.get("io", {}) or {},
    )
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    return parse_config(obj)


def _parse_date(value: Any) -> _dt.date:
    if isinstance(value, _dt.date):
        return value
    if isinstance(value, str):
        return _dt.date.fromisoformat(value)
    raise InvalidScript(f"cannot parse date from {value!r}")


def parse_script(obj: dict) -> ScenarioScript:
    if not isinstance(obj, dict):
        raise InvalidScript("scenario script must be a mapping")
    try:
        noise_obj = dict(obj.get("noise", {}) or {})
        if "conf_range" in noise_obj:
            noise_obj["conf_range"] = tuple(noise_obj["conf_range"])
        intervals = []
        for iv in obj.get("intervals", []):
            anchor = iv.get("anchor")
            intervals.append(
                ScriptInterval(
                    start_ms=rfc3339_to_ms(iv["start"]),
                    end_ms=rfc3339_to_ms(iv["end"]),
                    worker=bool(iv.get("worker", False)),
                    chair_id=iv.get("chair_id"),
                    anchor=(float(anchor[0]), float(anchor[1])) if anchor else None,
                )
            )
        script = ScenarioScript(
            station_id=str(obj["station"]),
            calendar=_parse_calendar(obj.get("calendar", {})),
            frame_rate=float(obj.get("frame_rate", 0.3)),
            start_date=_parse_date(obj["start_date"]),
            end_date=_parse_date(obj["end_date"]),
            intervals=tuple(intervals),
            noise=NoiseModel(**noise_obj),
        )
    except (KeyError, IndexError, TypeError, ValueError, ConfigError) as exc:
        raise InvalidScript(f"bad scenario script: {exc!r}") from None
    script.validate()
    return script


def load_script(path: str | Path) -> ScenarioScript:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise InvalidScript(f"cannot parse script {path}: {exc}") from None
    return parse_script(obj)


def default_config_yaml(station_ids: list[str], calendar: ShiftCalendar) -> str:
    """Render a runnable config document (used by `simulate` for convenience)."""
    doc = {
        "stations": [
            {"station_id": sid, "frame_rate": 0.3, "image_size": [1280, 720]}
            for sid in station_ids
        ],
        "calendar": {
            "timezone": calendar.timezone,
            "shift_start": calendar.shift_start.isoformat(),
            "shift_end": calendar.shift_end.isoformat(),
            "breaks": [[s.isoformat(), e.isoformat()] for s, e in calendar.breaks],
            "workdays": sorted(calendar.workdays),
        },
        "tracker": {},
        "analytics": {},
    }
    return yaml.safe_dump(doc, sort_keys=True)
