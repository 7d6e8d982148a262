# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""C kernels for the per-frame tracker math.

Formula-for-formula identical to the pure-Python implementations in
kalman.py (predict, gated IoU match, Joseph-form update); tests assert
exact float equality between both paths. Only the per-track inner step
lives here; all lifecycle logic stays in core.py.
"""

cdef double _MIN_STD = 1e-6


cdef inline void _cov_predict(double[::1] cov, double dt, double qp, double qv) noexcept:
    cdef int k, b
    cdef double p00, p01, p11
    for k in range(4):
        b = 3 * k
        p00 = cov[b]
        p01 = cov[b + 1]
        p11 = cov[b + 2]
        cov[b] = p00 + dt * (2.0 * p01 + dt * p11) + qp
        cov[b + 1] = p01 + dt * p11
        cov[b + 2] = p11 + qv


cdef inline void _cov_predict_update(double[::1] mean, double[::1] cov,
                                     double dt, double qp, double qv,
                                     double z0, double z1, double z2, double z3,
                                     double psf) noexcept:
    cdef double h = mean[3]
    if h < 0.0:
        h = -h
    cdef double r_std = psf * h
    if r_std < _MIN_STD:
        r_std = _MIN_STD
    cdef double r = r_std * r_std
    cdef double zs0 = z0, zs1 = z1, zs2 = z2, zs3 = z3
    cdef double p00, p01, p11, s, k0, k1, innov, om, z
    cdef int k, b
    for k in range(4):
        b = 3 * k
        if k == 0:
            z = zs0
        elif k == 1:
            z = zs1
        elif k == 2:
            z = zs2
        else:
            z = zs3
        p00 = cov[b] + dt * (2.0 * cov[b + 1] + dt * cov[b + 2]) + qp
        p01 = cov[b + 1] + dt * cov[b + 2]
        p11 = cov[b + 2] + qv
        s = p00 + r
        k0 = p00 / s
        k1 = p01 / s
        innov = z - mean[k]
        mean[k] += k0 * innov
        mean[k + 4] += k1 * innov
        om = 1.0 - k0
        cov[b] = om * om * p00 + k0 * k0 * r
        cov[b + 1] = om * (p01 - k1 * p00) + k0 * k1 * r
        cov[b + 2] = p11 - 2.0 * k1 * p01 + k1 * k1 * s


cpdef bint step_track(double[::1] mean, double[::1] cov, double dt,
                      double psf, double vsf, double gate,
                      bint has_det, double bx, double by, double bw, double bh):
    """Advance one track a frame and fold in its candidate detection.

    Predicts the mean (process noise scaled by the pre-predict height),
    tests the gated IoU against the candidate box when one exists, and
    either fuses the measurement into the covariance or coasts it.
    Returns True when the candidate matched.
    """
    cdef double h0 = mean[3]
    if h0 < 0.0:
        h0 = -h0
    cdef double sp = psf * h0
    if sp < _MIN_STD:
        sp = _MIN_STD
    cdef double sv = vsf * h0
    if sv < _MIN_STD:
        sv = _MIN_STD
    cdef double qp = sp * sp
    cdef double qv = sv * sv
    mean[0] += mean[4] * dt
    mean[1] += mean[5] * dt
    mean[2] += mean[6] * dt
    mean[3] += mean[7] * dt

    cdef bint hit = 0
    cdef double ah, aw, ax, ay, lo, hi, ix, iy, inter
    if has_det:
        ah = mean[3]
        aw = mean[2] * ah
        if aw > 0.0 and ah > 0.0:
            ax = mean[0] - aw * 0.5
            ay = mean[1] - ah * 0.5
            hi = ax + aw if ax + aw < bx + bw else bx + bw
            lo = ax if ax > bx else bx
            ix = hi - lo
            if ix > 0.0:
                hi = ay + ah if ay + ah < by + bh else by + bh
                lo = ay if ay > by else by
                iy = hi - lo
                if iy > 0.0:
                    inter = ix * iy
                    hit = inter >= gate * (aw * ah + bw * bh - inter)
    if hit:
        _cov_predict_update(mean, cov, dt, qp, qv,
                            bx + bw * 0.5, by + bh * 0.5, bw / bh, bh, psf)
    else:
        _cov_predict(cov, dt, qp, qv)
    return hit


cpdef tuple predict_mean(double[::1] mean, double dt, double psf, double vsf):
    """Advance the mean only; returns (q_pos, q_vel) for the deferred
    covariance work (generic association path)."""
    cdef double h = mean[3]
    if h < 0.0:
        h = -h
    cdef double sp = psf * h
    if sp < _MIN_STD:
        sp = _MIN_STD
    cdef double sv = vsf * h
    if sv < _MIN_STD:
        sv = _MIN_STD
    mean[0] += mean[4] * dt
    mean[1] += mean[5] * dt
    mean[2] += mean[6] * dt
    mean[3] += mean[7] * dt
    return (sp * sp, sv * sv)


cpdef void cov_predict(double[::1] cov, double dt, double qp, double qv):
    _cov_predict(cov, dt, qp, qv)


cpdef void cov_predict_update(double[::1] mean, double[::1] cov, double dt,
                              double qp, double qv,
                              double z0, double z1, double z2, double z3,
                              double psf):
    _cov_predict_update(mean, cov, dt, qp, qv, z0, z1, z2, z3, psf)
