"""Per-station multi-object tracking: Kalman prediction, IoU-gated assignment,
and a tentative/confirmed/deleted track lifecycle."""

from .assignment import solve_assignment
from .core import (
    EventKind,
    Track,
    TrackerParams,
    TrackerState,
    TrackEvent,
    TrackStatus,
    associate,
    iou,
    tracker_finish,
    tracker_step,
)
from .kalman import KalmanState, initiate_state, kf_predict, kf_update

__all__ = [
    "EventKind",
    "KalmanState",
    "Track",
    "TrackerParams",
    "TrackerState",
    "TrackEvent",
    "TrackStatus",
    "associate",
    "initiate_state",
    "iou",
    "kf_predict",
    "kf_update",
    "solve_assignment",
    "tracker_finish",
    "tracker_step",
]
