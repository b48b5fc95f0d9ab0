"""Entropy solutions of the scalar conservation law with a tabulated flux.

The flux is only ever known as a piecewise-linear interpolant, so every
variational problem here is solved exactly over that class by scanning the
interval endpoints and the interior grid breakpoints.  The Riemann solver
evaluates the variational value function; the Cauchy solver is a Godunov
scheme whose interface flux is the same variational value at zero velocity;
profiles and empirical measures compare through the sup distance between
cumulative mass functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .models import StructureError


class CflError(RuntimeError):
    """Raised when a Godunov step is asked to exceed the stable time step."""


# ---------------------------------------------------------------------------
# profiles, grids, and mass measures


@dataclass
class StepProfile:
    """Piecewise-constant profile: values[i] on [breakpoints[i-1], breakpoints[i])."""

    breakpoints: np.ndarray  # strictly increasing, may be empty
    values: np.ndarray  # len(breakpoints) + 1, leftmost/rightmost for the ends

    def __post_init__(self):
        self.breakpoints = np.asarray(self.breakpoints, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape[0] != self.breakpoints.shape[0] + 1:
            raise StructureError("need one more value than breakpoints")
        if self.breakpoints.size and np.any(np.diff(self.breakpoints) <= 0):
            raise StructureError("breakpoints must be strictly increasing")

    def __call__(self, x) -> np.ndarray | float:
        idx = np.searchsorted(self.breakpoints, np.asarray(x, dtype=np.float64), side="right")
        out = self.values[idx]
        return float(out) if np.isscalar(x) else out

    def support(self) -> tuple[float, float]:
        if self.values[0] != 0.0 or self.values[-1] != 0.0:
            raise StructureError("profile does not vanish at infinity")
        nz = np.nonzero(self.values != 0.0)[0]
        if nz.size == 0:
            return 0.0, 0.0
        return float(self.breakpoints[nz.min() - 1]), float(self.breakpoints[nz.max()])

    def total_variation(self) -> float:
        return float(np.abs(np.diff(self.values)).sum())

    def as_mass_measure(self) -> "MassMeasure":
        pieces = []
        for i in range(self.breakpoints.size - 1):
            if self.values[i + 1] != 0.0:
                pieces.append((float(self.breakpoints[i]), float(self.breakpoints[i + 1]),
                               float(self.values[i + 1])))
        self.support()  # validates vanishing ends
        return MassMeasure(pieces=pieces)

    @classmethod
    def riemann(cls, lam: float, rho: float, window: float) -> "StepProfile":
        """Two-density step truncated to [-window, window]."""
        return cls([-window, 0.0, window], [0.0, lam, rho, 0.0])

    @classmethod
    def zero(cls) -> "StepProfile":
        return cls([], [0.0])

    def to_csv(self, path) -> None:
        """Rows (x, value) at breakpoints: value column holds the right limit."""
        from .persist import write_csv

        write_csv(path, ["x", "value"],
                  zip(self.breakpoints.tolist(), self.values[1:].tolist()))

    @classmethod
    def from_csv(cls, path, leftmost: float = 0.0) -> "StepProfile":
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(rows[:, 0], np.concatenate([[leftmost], rows[:, 1]]))


@dataclass
class GridFunction:
    """Cell averages on a uniform mesh; cell i covers [x0 + i dx, x0 + (i+1) dx)."""

    x0: float
    dx: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.dx <= 0:
            raise StructureError("mesh width must be positive")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def edges(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.n + 1)

    def centers(self) -> np.ndarray:
        return self.x0 + self.dx * (np.arange(self.n) + 0.5)

    def mass(self) -> float:
        return float(self.values.sum() * self.dx)

    def as_mass_measure(self) -> "MassMeasure":
        pieces = [(float(self.x0 + i * self.dx), float(self.x0 + (i + 1) * self.dx), float(v))
                  for i, v in enumerate(self.values) if v != 0.0]
        return MassMeasure(pieces=pieces)

    def __call__(self, x) -> np.ndarray | float:
        idx = np.clip(((np.asarray(x) - self.x0) / self.dx).astype(np.int64), 0, self.n - 1)
        out = self.values[idx]
        return float(out) if np.isscalar(x) else out

    def to_csv(self, path) -> None:
        from .persist import write_csv

        write_csv(path, ["x", "value"], zip(self.centers().tolist(), self.values.tolist()))

    @classmethod
    def from_csv(cls, path) -> "GridFunction":
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        xs, vals = rows[:, 0], rows[:, 1]
        if xs.size < 2:
            raise StructureError("grid CSV needs at least two rows")
        dx = float(xs[1] - xs[0])
        if not np.allclose(np.diff(xs), dx):
            raise StructureError("grid CSV must have a uniform mesh")
        return cls(float(xs[0]) - dx / 2, dx, vals)


@dataclass
class MassMeasure:
    """Nonnegative measure with finitely many atoms and constant-density pieces."""

    atoms: list = field(default_factory=list)  # (location, mass)
    pieces: list = field(default_factory=list)  # (lo, hi, density)

    def __post_init__(self):
        for _, m in self.atoms:
            if m < 0:
                raise StructureError("negative atom mass")
        for lo, hi, d in self.pieces:
            if hi <= lo or d < 0:
                raise StructureError("malformed density piece")

    @classmethod
    def from_atoms(cls, locs, masses) -> "MassMeasure":
        return cls(atoms=[(float(x), float(m)) for x, m in zip(locs, masses) if m != 0.0])

    def total_mass(self) -> float:
        return float(sum(m for _, m in self.atoms) + sum((hi - lo) * d for lo, hi, d in self.pieces))

    def cumulative(self, xs: np.ndarray, left: bool = False) -> np.ndarray:
        """F(x) = mass of (-inf, x] (or (-inf, x) for the left limit)."""
        xs = np.asarray(xs, dtype=np.float64)
        out = np.zeros_like(xs)
        if self.atoms:
            locs = np.array([a for a, _ in self.atoms])
            mass = np.array([m for _, m in self.atoms])
            order = np.argsort(locs, kind="stable")
            locs, mass = locs[order], np.cumsum(mass[order])
            idx = np.searchsorted(locs, xs, side="left" if left else "right")
            out += np.where(idx > 0, mass[np.maximum(idx - 1, 0)], 0.0)
        for lo, hi, d in self.pieces:
            out += d * np.clip(xs - lo, 0.0, hi - lo)
        return out

    def criticals(self) -> np.ndarray:
        pts = [a for a, _ in self.atoms]
        for lo, hi, _ in self.pieces:
            pts += [lo, hi]
        return np.asarray(sorted(set(pts)), dtype=np.float64)


def _as_measure(obj) -> MassMeasure:
    if isinstance(obj, MassMeasure):
        return obj
    if hasattr(obj, "as_mass_measure"):
        return obj.as_mass_measure()
    raise StructureError(f"cannot interpret {type(obj).__name__} as a mass measure")


def delta_distance(mu, nu) -> float:
    """Exact sup_x |F_nu(x) - F_mu(x)| for compactly supported measures.

    The difference of cumulative functions is piecewise linear with jumps at
    atoms, so the supremum is attained at a critical point or its left limit.
    """
    mu, nu = _as_measure(mu), _as_measure(nu)
    xs = np.union1d(mu.criticals(), nu.criticals())
    if xs.size == 0:
        return 0.0
    best = abs(nu.total_mass() - mu.total_mass())
    for left in (False, True):
        d = np.abs(nu.cumulative(xs, left=left) - mu.cumulative(xs, left=left))
        best = max(best, float(d.max()))
    return best


# ---------------------------------------------------------------------------
# variational Riemann solver


@dataclass
class RiemannValue:
    value: float
    argopt: tuple  # densities attaining the optimum
    sense: str  # "min" | "max"


def _candidates(flux, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    d, g = flux.densities, flux.values
    i0 = np.searchsorted(d, lo, side="right")
    i1 = np.searchsorted(d, hi, side="left")
    rs = np.concatenate(([lo], d[i0:i1], [hi]))
    gs = np.concatenate(([np.interp(lo, d, g)], g[i0:i1], [np.interp(hi, d, g)]))
    return rs, gs


def riemann_value(flux, lam: float, rho: float, v: float) -> RiemannValue:
    """Variational value min/max of G(r) - v r over the interval between lam and rho.

    Minimum for lam <= rho, maximum for lam > rho; evaluated exactly on the
    piecewise-linear interpolant (candidates are the interval endpoints and
    interior grid breakpoints).
    """
    K = float(flux.K)
    if not (0 <= lam <= K and 0 <= rho <= K):
        raise ValueError(f"densities outside [0, {K}]")
    lo, hi = (lam, rho) if lam <= rho else (rho, lam)
    rs, gs = _candidates(flux, lo, hi)
    vals = gs - v * rs
    if lam <= rho:
        opt = vals.min()
        sense = "min"
    else:
        opt = vals.max()
        sense = "max"
    tol = 1e-12 * max(1.0, abs(opt))
    arg = tuple(float(r) for r, val in zip(rs, vals) if abs(val - opt) <= tol)
    return RiemannValue(float(opt), arg, sense)


def _hull_kinks(flux, lam: float, rho: float) -> np.ndarray:
    """Velocities where the variational minimizer/maximizer jumps.

    These are the edge slopes of the convex (lam <= rho) or concave hull of
    the candidate points (r, G(r)).
    """
    lo, hi = (lam, rho) if lam <= rho else (rho, lam)
    rs, gs = _candidates(flux, lo, hi)
    rs, uniq = np.unique(rs, return_index=True)
    gs = gs[uniq]
    if rs.size < 2:
        return np.zeros(0)
    sign = 1.0 if lam <= rho else -1.0
    hull = [0]
    for i in range(1, rs.size):
        while len(hull) >= 2:
            r1, r2 = rs[hull[-2]], rs[hull[-1]]
            g1, g2 = sign * gs[hull[-2]], sign * gs[hull[-1]]
            if (g2 - g1) * (rs[i] - r2) >= (sign * gs[i] - g2) * (r2 - r1):
                hull.pop()
            else:
                break
        hull.append(i)
    slopes = np.diff(gs[hull]) / np.diff(rs[hull]) if len(hull) > 1 else np.zeros(0)
    return np.unique(slopes)


def default_profile_step(flux, lam: float, rho: float) -> float:
    """Velocity half-width for the difference quotient in riemann_profile.

    Half the smallest gap between distinct kink velocities, so each quotient
    window straddles at most one kink and fan plateau values come out exact.
    """
    kinks = _hull_kinks(flux, lam, rho)
    if kinks.size >= 2:
        return float(max(np.diff(kinks).min() / 2.0, 1e-9))
    return 1e-6


def riemann_profile(flux, lam: float, rho: float, t: float, xs, h: float | None = None) -> np.ndarray:
    """Self-similar entropy profile of the two-density problem at time t.

    Recovered from the variational value as a symmetric difference quotient
    in the velocity variable with half-width h (see default_profile_step);
    plateau values are exact, shocks are smeared over a velocity width 2h.
    """
    if t <= 0:
        raise ValueError("time must be positive")
    xs = np.asarray(xs, dtype=np.float64)
    if h is None:
        h = default_profile_step(flux, lam, rho)
    out = np.empty(xs.shape)
    for i, x in enumerate(np.atleast_1d(xs)):
        xi = x / t
        gm = riemann_value(flux, lam, rho, xi - h).value
        gp = riemann_value(flux, lam, rho, xi + h).value
        out.flat[i] = (gm - gp) / (2.0 * h)
    return out


# ---------------------------------------------------------------------------
# Godunov scheme


class _RangeTable:
    """Sparse tables answering vectorized range-min/max queries on the grid values."""

    def __init__(self, vals: np.ndarray):
        n = vals.shape[0]
        levels = max(1, n.bit_length())
        self.mins = [vals.copy()]
        self.maxs = [vals.copy()]
        step = 1
        for _ in range(levels):
            prev_min, prev_max = self.mins[-1], self.maxs[-1]
            if prev_min.shape[0] <= step:
                break
            self.mins.append(np.minimum(prev_min[:-step], prev_min[step:]))
            self.maxs.append(np.maximum(prev_max[:-step], prev_max[step:]))
            step *= 2

    def query(self, i: np.ndarray, j: np.ndarray, what: str) -> np.ndarray:
        """Range extrema over half-open index ranges [i, j); empty -> +-inf."""
        table = self.mins if what == "min" else self.maxs
        fill = math.inf if what == "min" else -math.inf
        out = np.full(i.shape, fill)
        L = j - i
        nonempty = L > 0
        if not nonempty.any():
            return out
        k = np.zeros_like(L)
        k[nonempty] = np.floor(np.log2(L[nonempty])).astype(np.int64)
        for kk in np.unique(k[nonempty]):
            lev = table[kk]
            sel = nonempty & (k == kk)
            a = lev[i[sel]]
            b = lev[j[sel] - (1 << int(kk))]
            out[sel] = np.minimum(a, b) if what == "min" else np.maximum(a, b)
        return out


def _interface_flux(flux, table: _RangeTable, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Godunov numerical flux F(a, b), vectorized over interfaces."""
    d, g = flux.densities, flux.values
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    i0 = np.searchsorted(d, lo, side="right")
    i1 = np.searchsorted(d, hi, side="left")
    glo = np.interp(lo, d, g)
    ghi = np.interp(hi, d, g)
    fmin = np.minimum(np.minimum(glo, ghi), table.query(i0, i1, "min"))
    fmax = np.maximum(np.maximum(glo, ghi), table.query(i0, i1, "max"))
    return np.where(a <= b, fmin, fmax)


def godunov_step(flux, u: GridFunction, dt: float, table: _RangeTable | None = None) -> GridFunction:
    """One conservative update with the variational interface flux.

    Boundary cells see ghost copies of themselves, so padded domains with
    vanishing edge values conserve mass exactly.
    """
    V = flux.max_speed()
    if V > 0 and dt > u.dx / V * (1 + 1e-12):
        raise CflError(f"dt = {dt:g} exceeds the stable step dx/V = {u.dx / V:g}")
    if table is None:
        table = _RangeTable(flux.values)
    ext = np.concatenate(([u.values[0]], u.values, [u.values[-1]]))
    F = _interface_flux(flux, table, ext[:-1], ext[1:])
    new = u.values - (dt / u.dx) * (F[1:] - F[:-1])
    return GridFunction(u.x0, u.dx, new)


def project(u0, x0: float, dx: float, n: int) -> GridFunction:
    """Exact cell averages of a profile via its cumulative mass."""
    mu = _as_measure(u0)
    edges = x0 + dx * np.arange(n + 1)
    F = mu.cumulative(edges)
    return GridFunction(x0, dx, np.diff(F) / dx)


def solve_cauchy(flux, u0, t: float, dx: float, cfl: float = 0.45,
                 pad: float | None = None) -> GridFunction:
    """March the Godunov scheme to time t from compactly supported data."""
    return solve_cauchy_series(flux, u0, [t], dx, cfl=cfl, pad=pad)[0]


def solve_cauchy_series(flux, u0, times: Sequence[float], dx: float, cfl: float = 0.45,
                        pad: float | None = None) -> list[GridFunction]:
    """Solutions at several times along one Godunov march."""
    times = list(times)
    if any(t < 0 for t in times) or sorted(times) != times:
        raise ValueError("times must be nonnegative and increasing")
    if not (0 < cfl <= 1):
        raise ValueError("cfl fraction must lie in (0, 1]")
    V = flux.max_speed()
    horizon = times[-1] if times else 0.0
    if isinstance(u0, GridFunction):
        lo, hi = u0.x0, u0.x0 + u0.n * u0.dx
    else:
        lo, hi = u0.support()
    # numerical waves travel one cell per step, i.e. at speed V/cfl
    pad = pad if pad is not None else V * horizon / cfl + 2 * dx
    x0 = math.floor((lo - pad) / dx) * dx
    n = int(math.ceil((hi + pad - x0) / dx)) + 1
    u = project(u0, x0, dx, n)

    table = _RangeTable(flux.values)
    out = []
    t_now = 0.0
    dt_max = (cfl * dx / V) if V > 0 else math.inf
    for t in times:
        span = t - t_now
        if span > 0:
            steps = max(1, math.ceil(span / dt_max)) if math.isfinite(dt_max) else 1
            dt = span / steps
            for _ in range(steps):
                u = godunov_step(flux, u, dt, table)
            t_now = t
        out.append(GridFunction(u.x0, u.dx, u.values.copy()))
    return out


# ---------------------------------------------------------------------------
# step-profile approximation


def approximate_by_steps(u0, eps: float, density_grid) -> tuple[StepProfile, float]:
    """Approximate a compactly supported profile by plateaus of length >= eps.

    Plateau edges walk the input's own critical points greedily (never closer
    than eps), so a step profile that already satisfies the mesh rule with
    grid-valued plateaus is returned unchanged.  Plateau values are the exact
    window averages snapped to the provided density grid; the first and last
    values are zero.  Returns the profile and its sup-CDF distance from the
    input.
    """
    if eps <= 0:
        raise ValueError("plateau length must be positive")
    grid = np.asarray(sorted(density_grid), dtype=np.float64)
    mu = _as_measure(u0)
    crit = mu.criticals()
    if crit.size == 0 or mu.total_mass() == 0.0:
        return StepProfile.zero(), 0.0

    edges = [float(crit[0])]
    for c in crit[1:]:
        if c - edges[-1] >= eps - 1e-12:
            edges.append(float(c))
    if edges[-1] < crit[-1]:
        if len(edges) > 1:
            edges[-1] = float(crit[-1])  # absorb the short tail into the last plateau
        else:
            edges.append(float(crit[-1]))
    edges = np.asarray(edges)

    F = mu.cumulative(edges)
    avgs = np.diff(F) / np.diff(edges)
    snapped = grid[np.argmin(np.abs(avgs[:, None] - grid[None, :]), axis=1)]

    bps = [edges[0]]
    vals = [0.0, float(snapped[0])]
    for i in range(1, snapped.size):
        if snapped[i] != vals[-1]:
            bps.append(float(edges[i]))
            vals.append(float(snapped[i]))
    bps.append(float(edges[-1]))
    vals.append(0.0)
    profile = StepProfile(np.asarray(bps), np.asarray(vals))
    return profile, delta_distance(mu, profile.as_mass_measure())
