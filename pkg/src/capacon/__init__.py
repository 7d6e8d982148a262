"""Detection-stream analytics: tracking, station states, capacity reports."""

__version__ = "0.1.0"

from .errors import CapaconError  # noqa: F401
