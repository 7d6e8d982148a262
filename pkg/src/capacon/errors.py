"""Exception types shared across the package."""


class CapaconError(Exception):
    """Base class for all package-specific errors."""


class MalformedRecord(CapaconError):
    """A stream line could not be parsed into a valid frame record."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class ExcessiveMalformedInput(CapaconError):
    """The malformed-line ratio exceeded the configured tolerance."""

    def __init__(self, malformed: int, total: int, limit: float):
        super().__init__(
            f"{malformed}/{total} malformed lines exceeds limit of {limit:.1%}"
        )
        self.malformed = malformed
        self.total = total
        self.limit = limit


class UnknownTimezone(CapaconError):
    """Calendar references an IANA zone that cannot be resolved."""


class NonMonotonicTimestamp(CapaconError):
    """Frame ordering violated within one station stream."""

    def __init__(self, station_id: str, frame_index: int):
        super().__init__(f"station {station_id!r}: frame {frame_index} out of order")
        self.station_id = station_id
        self.frame_index = frame_index


class OutOfOrderFrame(CapaconError):
    """Tracker received a frame older than the last one it processed."""


class DegenerateBox(CapaconError):
    """Bounding box with non-positive width or height."""


class SingularInnovation(CapaconError):
    """Kalman innovation covariance is not invertible; track state is corrupt."""


class OrphanEvent(CapaconError):
    """Track event stream contains an end without a matching start."""


class UndefinedMetric(CapaconError):
    """Metric has an empty denominator and is reported as absent, never 0."""


class InvalidScript(CapaconError):
    """Scenario script violates its invariants."""


class ConfigError(CapaconError):
    """Run configuration failed validation."""
