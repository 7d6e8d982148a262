"""Constant-velocity Kalman filtering over box state (cx, cy, a, h).

The 8-dimensional state carries box center, aspect ratio a = w/h, height,
and per-frame velocities for each. Process and measurement noise scale with
box height, so uncertainty adapts to apparent object size.
"""

from __future__ import annotations

from array import array
from dataclasses import dataclass

import numpy as np

from ..errors import SingularInnovation

# Noise scale relative to box height; same defaults as TrackerParams.
DEFAULT_POS_STD_FACTOR = 1.0 / 20.0
DEFAULT_VEL_STD_FACTOR = 1.0 / 160.0

# Floor keeps R invertible if a corrupt state drives h toward zero.
_MIN_STD = 1e-6


@dataclass
class KalmanState:
    """mean: (8,) float array; covariance: (8, 8) symmetric PSD array."""

    mean: np.ndarray
    covariance: np.ndarray

    def box(self) -> tuple[float, float, float, float]:
        """Current (x, y, w, h) estimate."""
        cx, cy, a, h = self.mean[:4]
        w = a * h
        return (cx - w / 2.0, cy - h / 2.0, w, h)


def initiate_state(
    measurement: tuple[float, float, float, float],
    pos_std_factor: float = DEFAULT_POS_STD_FACTOR,
    vel_std_factor: float = DEFAULT_VEL_STD_FACTOR,
) -> KalmanState:
    """New track state from a first (cx, cy, a, h) measurement."""
    cx, cy, a, h = measurement
    mean = np.array([cx, cy, a, h, 0.0, 0.0, 0.0, 0.0])
    sp = max(2.0 * pos_std_factor * h, _MIN_STD)
    sv = max(10.0 * vel_std_factor * h, _MIN_STD)
    cov = np.diag([sp * sp] * 4 + [sv * sv] * 4)
    return KalmanState(mean, cov)


def _noise_stds(h: float, factor: float) -> float:
    return max(factor * abs(h), _MIN_STD)


def kf_predict(
    state: KalmanState,
    dt_frames: float,
    pos_std_factor: float = DEFAULT_POS_STD_FACTOR,
    vel_std_factor: float = DEFAULT_VEL_STD_FACTOR,
) -> KalmanState:
    """Advance the state dt_frames ahead under the constant-velocity model."""
    if dt_frames <= 0:
        raise ValueError("dt_frames must be positive")
    h = float(state.mean[3])
    sp = _noise_stds(h, pos_std_factor)
    sv = _noise_stds(h, vel_std_factor)
    f = np.eye(8)
    for k in range(4):
        f[k, k + 4] = dt_frames
    mean = f @ state.mean
    cov = f @ state.covariance @ f.T
    cov[np.diag_indices(8)] += np.array([sp * sp] * 4 + [sv * sv] * 4)
    cov = (cov + cov.T) / 2.0
    return KalmanState(mean, cov)


def kf_update(
    state: KalmanState,
    measurement: tuple[float, float, float, float],
    pos_std_factor: float = DEFAULT_POS_STD_FACTOR,
) -> KalmanState:
    """Fold one (cx, cy, a, h) measurement into the state.

    Uses the Joseph-form covariance update, which preserves symmetry and
    positive semidefiniteness under rounding.
    """
    z = np.asarray(measurement, dtype=float)
    if z[3] <= 0:
        raise ValueError("measured height must be positive")
    h = float(state.mean[3])
    r_std = _noise_stds(h, pos_std_factor)
    r = np.eye(4) * (r_std * r_std)

    p = state.covariance
    s = p[:4, :4] + r  # H selects the position block
    try:
        s_inv = np.linalg.inv(s)
    except np.linalg.LinAlgError as exc:
        raise SingularInnovation(str(exc)) from None
    if not np.all(np.isfinite(s_inv)):
        raise SingularInnovation("innovation covariance is not finite")

    gain = p[:, :4] @ s_inv  # (8, 4)
    innovation = z - state.mean[:4]
    mean = state.mean + gain @ innovation

    ikh = np.eye(8)
    ikh[:, :4] -= gain
    cov = ikh @ p @ ikh.T + gain @ r @ gain.T
    cov = (cov + cov.T) / 2.0
    return KalmanState(mean, cov)


# --------------------------------------------------------------------------
# Scalar fast path
#
# With this model the 8x8 system factorizes into four independent
# (position, velocity) channels as long as the covariance is block-diagonal
# per channel, which holds for every state the tracker itself creates. The
# tracker hot loop uses these list-based channel operations; equivalence
# with the ndarray path above is pinned by tests.
# --------------------------------------------------------------------------


def fast_initiate(cx: float, cy: float, a: float, h: float,
                  pos_std_factor: float, vel_std_factor: float):
    """(mean8, cov12) buffers; cov stores (p_pos, p_cross, p_vel) per channel."""
    sp = max(2.0 * pos_std_factor * h, _MIN_STD)
    sv = max(10.0 * vel_std_factor * h, _MIN_STD)
    pp = sp * sp
    pv = sv * sv
    return (
        array("d", (cx, cy, a, h, 0.0, 0.0, 0.0, 0.0)),
        array("d", (pp, 0.0, pv, pp, 0.0, pv, pp, 0.0, pv, pp, 0.0, pv)),
    )


def fast_noise_terms(mean: list, pos_std_factor: float, vel_std_factor: float
                     ) -> tuple[float, float]:
    """(q_pos, q_vel) process-noise variances from the current box height."""
    h = mean[3]
    if h < 0.0:
        h = -h
    sp = pos_std_factor * h
    if sp < _MIN_STD:
        sp = _MIN_STD
    sv = vel_std_factor * h
    if sv < _MIN_STD:
        sv = _MIN_STD
    return sp * sp, sv * sv


def fast_predict_mean(mean: list, dt: float) -> None:
    mean[0] += mean[4] * dt
    mean[1] += mean[5] * dt
    mean[2] += mean[6] * dt
    mean[3] += mean[7] * dt


def fast_cov_predict(cov: list, dt: float, q_pos: float, q_vel: float) -> None:
    (c0, c1, c2, c3, c4, c5, c6, c7, c8, c9, c10, c11) = cov
    cov[0] = c0 + dt * (2.0 * c1 + dt * c2) + q_pos
    cov[1] = c1 + dt * c2
    cov[2] = c2 + q_vel
    cov[3] = c3 + dt * (2.0 * c4 + dt * c5) + q_pos
    cov[4] = c4 + dt * c5
    cov[5] = c5 + q_vel
    cov[6] = c6 + dt * (2.0 * c7 + dt * c8) + q_pos
    cov[7] = c7 + dt * c8
    cov[8] = c8 + q_vel
    cov[9] = c9 + dt * (2.0 * c10 + dt * c11) + q_pos
    cov[10] = c10 + dt * c11
    cov[11] = c11 + q_vel


def fast_predict(mean: list, cov: list, dt: float,
                 pos_std_factor: float, vel_std_factor: float) -> None:
    q_pos, q_vel = fast_noise_terms(mean, pos_std_factor, vel_std_factor)
    fast_predict_mean(mean, dt)
    fast_cov_predict(cov, dt, q_pos, q_vel)


def fast_update(mean: list, cov: list, z0: float, z1: float, z2: float, z3: float,
                pos_std_factor: float) -> None:
    h = mean[3]
    if h < 0.0:
        h = -h
    r_std = pos_std_factor * h
    if r_std < _MIN_STD:
        r_std = _MIN_STD
    r = r_std * r_std
    # Joseph form specialized to one scalar observation per channel.
    p00 = cov[0]
    p01 = cov[1]
    p11 = cov[2]
    s = p00 + r
    k0 = p00 / s
    k1 = p01 / s
    innov = z0 - mean[0]
    mean[0] += k0 * innov
    mean[4] += k1 * innov
    om = 1.0 - k0
    cov[0] = om * om * p00 + k0 * k0 * r
    cov[1] = om * (p01 - k1 * p00) + k0 * k1 * r
    cov[2] = p11 - 2.0 * k1 * p01 + k1 * k1 * s

    p00 = cov[3]
    p01 = cov[4]
    p11 = cov[5]
    s = p00 + r
    k0 = p00 / s
    k1 = p01 / s
    innov = z1 - mean[1]
    mean[1] += k0 * innov
    mean[5] += k1 * innov
    om = 1.0 - k0
    cov[3] = om * om * p00 + k0 * k0 * r
    cov[4] = om * (p01 - k1 * p00) + k0 * k1 * r
    cov[5] = p11 - 2.0 * k1 * p01 + k1 * k1 * s

    p00 = cov[6]
    p01 = cov[7]
    p11 = cov[8]
    s = p00 + r
    k0 = p00 / s
    k1 = p01 / s
    innov = z2 - mean[2]
    mean[2] += k0 * innov
    mean[6] += k1 * innov
    om = 1.0 - k0
    cov[6] = om * om * p00 + k0 * k0 * r
    cov[7] = om * (p01 - k1 * p00) + k0 * k1 * r
    cov[8] = p11 - 2.0 * k1 * p01 + k1 * k1 * s

    p00 = cov[9]
    p01 = cov[10]
    p11 = cov[11]
    s = p00 + r
    k0 = p00 / s
    k1 = p01 / s
    innov = z3 - mean[3]
    mean[3] += k0 * innov
    mean[7] += k1 * innov
    om = 1.0 - k0
    cov[9] = om * om * p00 + k0 * k0 * r
    cov[10] = om * (p01 - k1 * p00) + k0 * k1 * r
    cov[11] = p11 - 2.0 * k1 * p01 + k1 * k1 * s


def fast_cov_predict_update(mean: list, cov: list, dt: float,
                            q_pos: float, q_vel: float,
                            z0: float, z1: float, z2: float, z3: float,
                            pos_std_factor: float) -> None:
    """Covariance predict fused with a measurement update.

    Equivalent to fast_cov_predict followed by fast_update on a mean whose
    positions were already advanced by fast_predict_mean; the predicted
    covariance stays in locals instead of a list round-trip.
    """
    h = mean[3]
    if h < 0.0:
        h = -h
    r_std = pos_std_factor * h
    if r_std < _MIN_STD:
        r_std = _MIN_STD
    r = r_std * r_std

    p00 = cov[0] + dt * (2.0 * cov[1] + dt * cov[2]) + q_pos
    p01 = cov[1] + dt * cov[2]
    p11 = cov[2] + q_vel
    s = p00 + r
    k0 = p00 / s
    k1 = p01 / s
    innov = z0 - mean[0]
    mean[0] += k0 * innov
    mean[4] += k1 * innov
    om = 1.0 - k0
    cov[0] = om * om * p00 + k0 * k0 * r
    cov[1] = om * (p01 - k1 * p00) + k0 * k1 * r
    cov[2] = p11 - 2.0 * k1 * p01 + k1 * k1 * s

    p00 = cov[3] + dt * (2.0 * cov[4] + dt * cov[5]) + q_pos
    p01 = cov[4] + dt * cov[5]
    p11 = cov[5] + q_vel
    s = p00 + r
    k0 = p00 / s
    k1 = p01 / s
    innov = z1 - mean[1]
    mean[1] += k0 * innov
    mean[5] += k1 * innov
    om = 1.0 - k0
    cov[3] = om * om * p00 + k0 * k0 * r
    cov[4] = om * (p01 - k1 * p00) + k0 * k1 * r
    cov[5] = p11 - 2.0 * k1 * p01 + k1 * k1 * s

    p00 = cov[6] + dt * (2.0 * cov[7] + dt * cov[8]) + q_pos
    p01 = cov[7] + dt * cov[8]
    p11 = cov[8] + q_vel
    s = p00 + r
    k0 = p00 / s
    k1 = p01 / s
    innov = z2 - mean[2]
    mean[2] += k0 * innov
    mean[6] += k1 * innov
    om = 1.0 - k0
    cov[6] = om * om * p00 + k0 * k0 * r
    cov[7] = om * (p01 - k1 * p00) + k0 * k1 * r
    cov[8] = p11 - 2.0 * k1 * p01 + k1 * k1 * s

    p00 = cov[9] + dt * (2.0 * cov[10] + dt * cov[11]) + q_pos
    p01 = cov[10] + dt * cov[11]
    p11 = cov[11] + q_vel
    s = p00 + r
    k0 = p00 / s
    k1 = p01 / s
    innov = z3 - mean[3]
    mean[3] += k0 * innov
    mean[7] += k1 * innov
    om = 1.0 - k0
    cov[9] = om * om * p00 + k0 * k0 * r
    cov[10] = om * (p01 - k1 * p00) + k0 * k1 * r
    cov[11] = p11 - 2.0 * k1 * p01 + k1 * k1 * s


def fast_to_state(mean: list, cov: list) -> KalmanState:
    """Expand the channel representation into a full KalmanState."""
    full = np.zeros((8, 8))
    for k in range(4):
        base = 3 * k
        full[k, k] = cov[base]
        full[k, k + 4] = full[k + 4, k] = cov[base + 1]
        full[k + 4, k + 4] = cov[base + 2]
    return KalmanState(np.array(mean, dtype=float), full)


def fast_from_state(state: KalmanState) -> tuple[list, list]:
    """Channel representation of a block-diagonal state (tracker-internal)."""
    cov = []
    p = state.covariance
    for k in range(4):
        cov.extend((float(p[k, k]), float(p[k, k + 4]), float(p[k + 4, k + 4])))
    return list(map(float, state.mean)), cov
