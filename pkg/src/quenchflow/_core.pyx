# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled event kernels.

Mirrors ``quenchflow._reference`` instruction for instruction: every branch
and every floating-point expression keeps the same order of operations so
that trajectories agree bit for bit with the pure-Python backend.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef cnp.int64_t i64
ctypedef cnp.float64_t f64
ctypedef cnp.uint8_t u8

BACKEND_NAME = "compiled"


cdef inline i64 _mod(i64 a, i64 L) noexcept nogil:
    cdef i64 r = a % L
    if r < 0:
        r += L
    return r


cdef inline i64 _target(i64 x, i64 z, i64 L, bint ring) noexcept nogil:
    cdef i64 y = x + z
    if ring:
        return _mod(y, L)
    if y < 0 or y >= L:
        return -1
    return y


# ---------------------------------------------------------------------------
# plain evolution


def mis_evolve(i64[::1] eta, f64[::1] alpha, f64[:, ::1] b, i64[::1] zvals,
               double invnorm, bint ring, i64[::1] sites, i64[::1] zi, f64[::1] v2,
               accepted=None):
    cdef i64 L = eta.shape[0]
    cdef Py_ssize_t e, nev = sites.shape[0]
    cdef i64 x, y, n, m
    cdef i64 n_changed = 0
    cdef u8[::1] acc
    cdef bint track = accepted is not None
    if track:
        acc = accepted
    for e in range(nev):
        x = sites[e]
        n = eta[x]
        if n <= 0:
            continue
        y = _target(x, zvals[zi[e]], L, ring)
        if y < 0 or y == x:
            continue
        m = eta[y]
        if v2[e] < alpha[x] * b[n, m] * invnorm:
            eta[x] = n - 1
            eta[y] = m + 1
            n_changed += 1
            if track:
                acc[e] = 1
    return n_changed


def gen_evolve(i64[::1] eta, f64[:, :, :, ::1] B, i64[::1] zvals, f64[::1] invP,
               bint ring, i64[::1] sites, i64[::1] zi, f64[::1] v2, accepted=None):
    cdef i64 L = eta.shape[0]
    cdef Py_ssize_t e, nev = sites.shape[0]
    cdef i64 x, y, n, m, j
    cdef i64 n_changed = 0
    cdef u8[::1] acc
    cdef bint track = accepted is not None
    if track:
        acc = accepted
    for e in range(nev):
        x = sites[e]
        n = eta[x]
        if n <= 0:
            continue
        j = zi[e]
        y = _target(x, zvals[j], L, ring)
        if y < 0 or y == x:
            continue
        m = eta[y]
        if v2[e] < B[x, j, n, m] * invP[j]:
            eta[x] = n - 1
            eta[y] = m + 1
            n_changed += 1
            if track:
                acc[e] = 1
    return n_changed


cdef inline Py_ssize_t _kstep_pick(f64[:, ::1] cumq, i64 x, double v) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = cumq.shape[1], mid
    while lo < hi:
        mid = (lo + hi) // 2
        if v >= cumq[x, mid]:
            lo = mid + 1
        else:
            hi = mid
    return lo


def kstep_evolve(i64[::1] eta, i64[:, ::1] paths, f64[:, ::1] cumq, f64[:, :, ::1] beta,
                 i64 K, bint ring, i64[::1] sites, f64[::1] v1, f64[::1] v2, accepted=None):
    cdef i64 L = eta.shape[0]
    cdef Py_ssize_t e, i, pi, nev = sites.shape[0]
    cdef Py_ssize_t k = paths.shape[1]
    cdef i64 x, y, s, step
    cdef i64 n_changed = 0
    cdef u8[::1] acc
    cdef bint track = accepted is not None
    if track:
        acc = accepted
    for e in range(nev):
        x = sites[e]
        if eta[x] <= 0:
            continue
        pi = _kstep_pick(cumq, x, v1[e])
        y = -1
        step = -1
        for i in range(k):
            s = _target(x, paths[pi, i], L, ring)
            if s >= 0 and eta[s] < K:
                y = s
                step = i
                break
        if step < 0 or y == x:
            continue
        if v2[e] < beta[x, pi, step]:
            eta[x] -= 1
            eta[y] += 1
            n_changed += 1
            if track:
                acc[e] = 1
    return n_changed


# ---------------------------------------------------------------------------
# evolution with exact time integration of the instantaneous flux


cdef inline double _mis_site_flux(i64[::1] eta, f64[::1] alpha, f64[:, ::1] b,
                                  i64[::1] zvals, f64[::1] zp, i64 x, i64 L) noexcept nogil:
    cdef double s = 0.0
    cdef Py_ssize_t j
    cdef i64 y
    for j in range(zvals.shape[0]):
        y = _mod(x + zvals[j], L)
        s += zp[j] * b[eta[x], eta[y]]
    return alpha[x] * s


cdef inline double _gen_site_flux(i64[::1] eta, f64[:, :, :, ::1] B,
                                  i64[::1] zvals, i64 x, i64 L) noexcept nogil:
    cdef double s = 0.0
    cdef Py_ssize_t j
    cdef i64 y
    for j in range(zvals.shape[0]):
        y = _mod(x + zvals[j], L)
        s += zvals[j] * B[x, j, eta[x], eta[y]]
    return s


cdef inline void _accumulate(f64[::1] state, double t_to, f64[::1] bins,
                             double win_start, double batch_len) noexcept nogil:
    cdef double t_last = state[0]
    cdef double S = state[1]
    cdef Py_ssize_t nb = bins.shape[0]
    cdef Py_ssize_t idx
    cdef double boundary, upto
    while t_last < t_to:
        idx = <Py_ssize_t>((t_last - win_start) / batch_len)
        if idx < 0:
            idx = 0
        elif idx >= nb:
            idx = nb - 1
        boundary = win_start + (idx + 1) * batch_len
        upto = t_to if t_to < boundary else boundary
        if upto <= t_last:
            upto = t_to
        bins[idx] += S * (upto - t_last)
        t_last = upto
    state[0] = t_last


cdef i64 _collect_affected(i64 x, i64 y, i64[::1] zvals, i64 L, i64* buf) noexcept nogil:
    cdef i64 count = 0
    cdef Py_ssize_t j, q
    cdef i64 s, base, i
    cdef bint seen
    buf[count] = x
    count += 1
    if y != x:
        buf[count] = y
        count += 1
    for q in range(2):
        base = x if q == 0 else y
        for j in range(zvals.shape[0]):
            s = _mod(base - zvals[j], L)
            seen = False
            for i in range(count):
                if buf[i] == s:
                    seen = True
                    break
            if not seen:
                buf[count] = s
                count += 1
    return count


def mis_evolve_flux(i64[::1] eta, f64[::1] alpha, f64[:, ::1] b, i64[::1] zvals,
                    f64[::1] zp, double invnorm, i64[::1] sites, i64[::1] zi, f64[::1] v2,
                    f64[::1] times, double t_end, f64[::1] state, f64[::1] bins,
                    double win_start, double batch_len):
    cdef i64 L = eta.shape[0]
    cdef Py_ssize_t e, nev = sites.shape[0]
    cdef i64 x, y, n
    cdef i64 nz = zvals.shape[0]
    cdef i64 buf[134]
    cdef i64 na, a
    cdef double before[134]
    cdef double delta
    if 2 + 2 * nz > 134:
        raise ValueError("kernel support too large for the flux accumulator")
    for e in range(nev):
        _accumulate(state, times[e], bins, win_start, batch_len)
        x = sites[e]
        n = eta[x]
        if n <= 0:
            continue
        y = _mod(x + zvals[zi[e]], L)
        if y == x:
            continue
        if v2[e] < alpha[x] * b[n, eta[y]] * invnorm:
            na = _collect_affected(x, y, zvals, L, buf)
            for a in range(na):
                before[a] = _mis_site_flux(eta, alpha, b, zvals, zp, buf[a], L)
            eta[x] -= 1
            eta[y] += 1
            delta = 0.0
            for a in range(na):
                delta += _mis_site_flux(eta, alpha, b, zvals, zp, buf[a], L) - before[a]
            state[1] += delta
    _accumulate(state, t_end, bins, win_start, batch_len)


def gen_evolve_flux(i64[::1] eta, f64[:, :, :, ::1] B, i64[::1] zvals, f64[::1] invP,
                    i64[::1] sites, i64[::1] zi, f64[::1] v2,
                    f64[::1] times, double t_end, f64[::1] state, f64[::1] bins,
                    double win_start, double batch_len):
    cdef i64 L = eta.shape[0]
    cdef Py_ssize_t e, nev = sites.shape[0]
    cdef i64 x, y, n, j
    cdef i64 nz = zvals.shape[0]
    cdef i64 buf[134]
    cdef i64 na, a
    cdef double before[134]
    cdef double delta
    if 2 + 2 * nz > 134:
        raise ValueError("kernel support too large for the flux accumulator")
    for e in range(nev):
        _accumulate(state, times[e], bins, win_start, batch_len)
        x = sites[e]
        n = eta[x]
        if n <= 0:
            continue
        j = zi[e]
        y = _mod(x + zvals[j], L)
        if y == x:
            continue
        if v2[e] < B[x, j, n, eta[y]] * invP[j]:
            na = _collect_affected(x, y, zvals, L, buf)
            for a in range(na):
                before[a] = _gen_site_flux(eta, B, zvals, buf[a], L)
            eta[x] -= 1
            eta[y] += 1
            delta = 0.0
            for a in range(na):
                delta += _gen_site_flux(eta, B, zvals, buf[a], L) - before[a]
            state[1] += delta
    _accumulate(state, t_end, bins, win_start, batch_len)


# ---------------------------------------------------------------------------
# evolution with observer currents


cdef inline void _obs_advance(i64[::1] eta, i64 origin, i64 L, bint ring,
                              f64[::1] vel, i64[::1] pos, i64[::1] nsteps, f64[::1] next_t,
                              i64[::1] phi_tilde, double t_to, double t_origin) noexcept nogil:
    cdef Py_ssize_t j
    cdef i64 site, idx, occ
    for j in range(vel.shape[0]):
        while next_t[j] <= t_to:
            if vel[j] > 0:
                pos[j] += 1
                site = pos[j]
            else:
                site = pos[j]
                pos[j] -= 1
            idx = _mod(site - origin, L) if ring else site - origin
            occ = eta[idx] if (0 <= idx and idx < L) else 0
            if vel[j] > 0:
                phi_tilde[j] -= occ
            else:
                phi_tilde[j] += occ
            nsteps[j] += 1
            # floor(v t) steps at k/v rightward but at k/|v| (k from 0) leftward
            if vel[j] > 0:
                next_t[j] = t_origin + (nsteps[j] + 1) / vel[j]
            else:
                next_t[j] = t_origin + nsteps[j] / (-vel[j])


cdef inline void _obs_cross(i64 origin, i64 L, bint ring, f64[::1] vel, i64[::1] pos,
                            i64[::1] phi_plus, i64[::1] phi_minus,
                            i64 x, i64 y, i64 z) noexcept nogil:
    cdef Py_ssize_t j
    cdef i64 o, d, start
    for j in range(vel.shape[0]):
        o = _mod(pos[j] - origin, L) if ring else pos[j] - origin
        if z > 0:
            d = _mod(o - x, L) if ring else o - x
            if 0 <= d and d < z:
                phi_plus[j] += 1
        else:
            start = _mod(x + z, L) if ring else x + z
            d = _mod(o - start, L) if ring else o - start
            if 0 <= d and d < -z:
                phi_minus[j] += 1


def mis_evolve_current(i64[::1] eta, f64[::1] alpha, f64[:, ::1] b, i64[::1] zvals,
                       double invnorm, bint ring, i64 origin, i64[::1] sites, i64[::1] zi,
                       f64[::1] v2, f64[::1] times, double t_end, double t_origin,
                       f64[::1] vel, i64[::1] pos, i64[::1] nsteps, f64[::1] next_t,
                       i64[::1] phi_plus, i64[::1] phi_minus, i64[::1] phi_tilde):
    cdef i64 L = eta.shape[0]
    cdef Py_ssize_t e, nev = sites.shape[0]
    cdef i64 x, y, n, m, z
    for e in range(nev):
        _obs_advance(eta, origin, L, ring, vel, pos, nsteps, next_t, phi_tilde, times[e], t_origin)
        x = sites[e]
        n = eta[x]
        if n <= 0:
            continue
        z = zvals[zi[e]]
        y = _target(x, z, L, ring)
        if y < 0 or y == x:
            continue
        m = eta[y]
        if v2[e] < alpha[x] * b[n, m] * invnorm:
            eta[x] = n - 1
            eta[y] = m + 1
            _obs_cross(origin, L, ring, vel, pos, phi_plus, phi_minus, x, y, z)
    _obs_advance(eta, origin, L, ring, vel, pos, nsteps, next_t, phi_tilde, t_end, t_origin)


def gen_evolve_current(i64[::1] eta, f64[:, :, :, ::1] B, i64[::1] zvals, f64[::1] invP,
                       bint ring, i64 origin, i64[::1] sites, i64[::1] zi, f64[::1] v2,
                       f64[::1] times, double t_end, double t_origin,
                       f64[::1] vel, i64[::1] pos, i64[::1] nsteps, f64[::1] next_t,
                       i64[::1] phi_plus, i64[::1] phi_minus, i64[::1] phi_tilde):
    cdef i64 L = eta.shape[0]
    cdef Py_ssize_t e, nev = sites.shape[0]
    cdef i64 x, y, n, j, z
    for e in range(nev):
        _obs_advance(eta, origin, L, ring, vel, pos, nsteps, next_t, phi_tilde, times[e], t_origin)
        x = sites[e]
        n = eta[x]
        if n <= 0:
            continue
        j = zi[e]
        z = zvals[j]
        y = _target(x, z, L, ring)
        if y < 0 or y == x:
            continue
        if v2[e] < B[x, j, n, eta[y]] * invP[j]:
            eta[x] = n - 1
            eta[y] += 1
            _obs_cross(origin, L, ring, vel, pos, phi_plus, phi_minus, x, y, z)
    _obs_advance(eta, origin, L, ring, vel, pos, nsteps, next_t, phi_tilde, t_end, t_origin)


def kstep_evolve_current(i64[::1] eta, i64[:, ::1] paths, f64[:, ::1] cumq, f64[:, :, ::1] beta,
                         i64 K, bint ring, i64 origin, i64[::1] sites, f64[::1] v1, f64[::1] v2,
                         f64[::1] times, double t_end, double t_origin,
                         f64[::1] vel, i64[::1] pos, i64[::1] nsteps, f64[::1] next_t,
                         i64[::1] phi_plus, i64[::1] phi_minus, i64[::1] phi_tilde):
    cdef i64 L = eta.shape[0]
    cdef Py_ssize_t e, ii, pi, nev = sites.shape[0]
    cdef Py_ssize_t k = paths.shape[1]
    cdef i64 x, y, s, step, z
    for e in range(nev):
        _obs_advance(eta, origin, L, ring, vel, pos, nsteps, next_t, phi_tilde, times[e], t_origin)
        x = sites[e]
        if eta[x] <= 0:
            continue
        pi = _kstep_pick(cumq, x, v1[e])
        y = -1
        step = -1
        for ii in range(k):
            s = _target(x, paths[pi, ii], L, ring)
            if s >= 0 and eta[s] < K:
                y = s
                step = ii
                break
        if step < 0 or y == x:
            continue
        if v2[e] < beta[x, pi, step]:
            eta[x] -= 1
            eta[y] += 1
            z = paths[pi, step]
            _obs_cross(origin, L, ring, vel, pos, phi_plus, phi_minus, x, y, z)
    _obs_advance(eta, origin, L, ring, vel, pos, nsteps, next_t, phi_tilde, t_end, t_origin)
