"""Pure-Python event kernels.

These loops define the exact per-event semantics of every model family; the
compiled module in ``_core.pyx`` reimplements them instruction for
instruction.  Trajectories must agree bit for bit between the two backends,
so keep every threshold expression and branch order identical when editing.
"""

from __future__ import annotations

BACKEND_NAME = "python"


def _target(x: int, z: int, L: int, ring: bool) -> int:
    """Arrival site index, or -1 when the jump leaves a segment."""
    y = x + z
    if ring:
        return y % L
    return y if 0 <= y < L else -1


# ---------------------------------------------------------------------------
# plain evolution


def mis_evolve(eta, alpha, b, zvals, invnorm, ring, sites, zi, v2, accepted=None):
    L = eta.shape[0]
    n_changed = 0
    for e in range(sites.shape[0]):
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
            if accepted is not None:
                accepted[e] = 1
    return n_changed


def gen_evolve(eta, B, zvals, invP, ring, sites, zi, v2, accepted=None):
    L = eta.shape[0]
    n_changed = 0
    for e in range(sites.shape[0]):
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
            if accepted is not None:
                accepted[e] = 1
    return n_changed


def _kstep_pick(cumq_row, v):
    # first index with cumq > v, matching numpy searchsorted side="right"
    lo, hi = 0, cumq_row.shape[0]
    while lo < hi:
        mid = (lo + hi) // 2
        if v >= cumq_row[mid]:
            lo = mid + 1
        else:
            hi = mid
    return lo


def kstep_evolve(eta, paths, cumq, beta, K, ring, sites, v1, v2, accepted=None):
    L = eta.shape[0]
    k = paths.shape[1]
    n_changed = 0
    for e in range(sites.shape[0]):
        x = sites[e]
        if eta[x] <= 0:
            continue
        pi = _kstep_pick(cumq[x], v1[e])
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
            if accepted is not None:
                accepted[e] = 1
    return n_changed


# ---------------------------------------------------------------------------
# evolution with exact time integration of the instantaneous flux


def _mis_site_flux(eta, alpha, b, zvals, zp, x, L, ring):
    s = 0.0
    for j in range(zvals.shape[0]):
        y = _target(x, zvals[j], L, ring)
        if y >= 0:
            s += zp[j] * b[eta[x], eta[y]]
    return alpha[x] * s


def _gen_site_flux(eta, B, zvals, x, L, ring):
    s = 0.0
    for j in range(zvals.shape[0]):
        y = _target(x, zvals[j], L, ring)
        if y >= 0:
            s += zvals[j] * B[x, j, eta[x], eta[y]]
    return s


def _accumulate(state, t_to, bins, win_start, batch_len):
    """Distribute S * dt into batch bins between state's t_last and t_to."""
    t_last, S = state[0], state[1]
    nb = bins.shape[0]
    while t_last < t_to:
        idx = int((t_last - win_start) / batch_len)
        if idx < 0:
            idx = 0
        elif idx >= nb:
            idx = nb - 1
        boundary = win_start + (idx + 1) * batch_len
        upto = t_to if t_to < boundary else boundary
        if upto <= t_last:  # guard against boundary rounding
            upto = t_to
        bins[idx] += S * (upto - t_last)
        t_last = upto
    state[0] = t_last


def _flux_jump(eta, site_flux, args, x, y, nz_sites, state):
    """Apply jump x -> y and update the running total flux S."""
    affected = []
    for s in (x, y):
        if s not in affected:
            affected.append(s)
    for base in (x, y):
        for d in nz_sites:
            s = base - d
            s = s % eta.shape[0]
            if s not in affected:
                affected.append(s)
    before = [site_flux(eta, *args, s) for s in affected]
    eta[x] -= 1
    eta[y] += 1
    after = [site_flux(eta, *args, s) for s in affected]
    state[1] += sum(a - b for a, b in zip(after, before))


def mis_evolve_flux(eta, alpha, b, zvals, zp, invnorm, sites, zi, v2, times, t_end,
                    state, bins, win_start, batch_len):
    """Ring-only evolution accumulating the integral of the total flux."""
    L = eta.shape[0]

    def site_flux(cfg, x):
        return _mis_site_flux(cfg, alpha, b, zvals, zp, x, L, True)

    nz = [int(z) for z in zvals]
    for e in range(sites.shape[0]):
        _accumulate(state, times[e], bins, win_start, batch_len)
        x = sites[e]
        n = eta[x]
        if n <= 0:
            continue
        y = (x + zvals[zi[e]]) % L
        if y == x:
            continue
        if v2[e] < alpha[x] * b[n, eta[y]] * invnorm:
            _flux_jump(eta, lambda cfg, s: site_flux(cfg, s), (), x, y, nz, state)
    _accumulate(state, t_end, bins, win_start, batch_len)


def gen_evolve_flux(eta, B, zvals, invP, sites, zi, v2, times, t_end,
                    state, bins, win_start, batch_len):
    L = eta.shape[0]

    def site_flux(cfg, x):
        return _gen_site_flux(cfg, B, zvals, x, L, True)

    nz = [int(z) for z in zvals]
    for e in range(sites.shape[0]):
        _accumulate(state, times[e], bins, win_start, batch_len)
        x = sites[e]
        n = eta[x]
        if n <= 0:
            continue
        j = zi[e]
        y = (x + zvals[j]) % L
        if y == x:
            continue
        if v2[e] < B[x, j, n, eta[y]] * invP[j]:
            _flux_jump(eta, lambda cfg, s: site_flux(cfg, s), (), x, y, nz, state)
    _accumulate(state, t_end, bins, win_start, batch_len)


# ---------------------------------------------------------------------------
# evolution with observer currents
#
# Observer state arrays (one entry per observer):
#   vel, pos, nsteps, next_t, phi_plus, phi_minus, phi_tilde
# pos holds lattice coordinates (origin offset applied by the caller).


def _obs_advance(eta, origin, L, ring, vel, pos, nsteps, next_t, phi_tilde, t_to, t_origin):
    for j in range(vel.shape[0]):
        while next_t[j] <= t_to:
            if vel[j] > 0:
                pos[j] += 1
                site = pos[j]
            else:
                site = pos[j]
                pos[j] -= 1
            idx = (site - origin) % L if ring else site - origin
            occ = eta[idx] if 0 <= idx < L else 0
            if vel[j] > 0:
                phi_tilde[j] -= occ
            else:
                phi_tilde[j] += occ
            nsteps[j] += 1
            # floor(v t) steps at k/v rightward but at k/|v| (k from 0) leftward
            if vel[j] > 0:
                next_t[j] = t_origin + (nsteps[j] + 1) / vel[j]
            else:
                next_t[j] = t_origin + nsteps[j] / -vel[j]


def _obs_cross(origin, L, ring, vel, pos, phi_plus, phi_minus, x, y, z):
    """Count the jump x -> y (displacement z, lattice indices) for each observer."""
    for j in range(vel.shape[0]):
        o = (pos[j] - origin) % L if ring else pos[j] - origin
        if z > 0:
            d = (o - x) % L if ring else o - x
            if 0 <= d < z:
                phi_plus[j] += 1
        else:
            start = (x + z) % L if ring else x + z
            d = (o - start) % L if ring else o - start
            if 0 <= d < -z:
                phi_minus[j] += 1


def mis_evolve_current(eta, alpha, b, zvals, invnorm, ring, origin, sites, zi, v2,
                       times, t_end, t_origin, vel, pos, nsteps, next_t, phi_plus, phi_minus, phi_tilde):
    L = eta.shape[0]
    for e in range(sites.shape[0]):
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


def gen_evolve_current(eta, B, zvals, invP, ring, origin, sites, zi, v2,
                       times, t_end, t_origin, vel, pos, nsteps, next_t, phi_plus, phi_minus, phi_tilde):
    L = eta.shape[0]
    for e in range(sites.shape[0]):
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


def kstep_evolve_current(eta, paths, cumq, beta, K, ring, origin, sites, v1, v2,
                         times, t_end, t_origin, vel, pos, nsteps, next_t, phi_plus, phi_minus, phi_tilde):
    L = eta.shape[0]
    k = paths.shape[1]
    for e in range(sites.shape[0]):
        _obs_advance(eta, origin, L, ring, vel, pos, nsteps, next_t, phi_tilde, times[e], t_origin)
        x = sites[e]
        if eta[x] <= 0:
            continue
        pi = _kstep_pick(cumq[x], v1[e])
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
            z = paths[pi, step]
            _obs_cross(origin, L, ring, vel, pos, phi_plus, phi_minus, x, y, z)
    _obs_advance(eta, origin, L, ring, vel, pos, nsteps, next_t, phi_tilde, t_end, t_origin)
