"""Scaling experiments confronting particle runs with entropy solutions.

The harness samples microscopic configurations from macroscopic profiles,
runs them at hyperbolic scales (time N t on lattices of size O(N)), and
tracks the sup-CDF distance between the rescaled empirical measure and the
Godunov solution driven by the estimated flux.  It also measures observer
currents against the variational Riemann value, and bundles the coupling
property suites (order preservation, discrepancy annihilation, macroscopic
stability).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._rng import derive_seed, generator
from .engine import (
    RING,
    SEGMENT,
    Configuration,
    Runtime,
    build_runtime,
    count_current,
    evolve,
    evolve_coupled,
    stream_for,
)
from .flux import FluxTable
from .models import ModelSpec, StructureError, lipschitz_bound, sample_environment
from .pde import MassMeasure, StepProfile, delta_distance, riemann_value, solve_cauchy_series


# ---------------------------------------------------------------------------
# microscopic sampling of macroscopic profiles


def sample_initial(u0, N: int, K: int, seed, window: Optional[tuple] = None,
                   geometry: str = SEGMENT) -> Configuration:
    """Occupancies eta(y) = floor(u0(y/N)) + Bernoulli(frac(u0(y/N))).

    ``window`` is a macroscopic interval (defaults to the support of u0);
    the lattice covers it with coordinates floor(lo N) .. ceil(hi N).
    """
    if window is None:
        window = u0.support()
    lo, hi = window
    y0 = math.floor(lo * N)
    y1 = math.ceil(hi * N)
    coords = np.arange(y0, y1 + 1, dtype=np.int64)
    u = np.asarray(u0(coords / N), dtype=np.float64)
    if np.any(u < 0) or np.any(u > K):
        raise StructureError("profile values escape [0, K]")
    base = np.floor(u)
    frac = u - base
    rng = generator("sample-initial", seed)
    occ = base.astype(np.int64) + (rng.random(coords.size) < frac).astype(np.int64)
    return Configuration(occ, geometry, origin=int(y0))


@dataclass
class EmpiricalMeasure:
    """Rescaled configuration: mass eta(y)/N at position y/N."""

    N: int
    measure: MassMeasure

    @property
    def total_mass(self) -> float:
        return self.measure.total_mass()

    def as_mass_measure(self) -> MassMeasure:
        return self.measure


def empirical_measure(config: Configuration, N: int) -> EmpiricalMeasure:
    coords = config.coords()
    sel = config.occ != 0
    return EmpiricalMeasure(
        N, MassMeasure.from_atoms(coords[sel] / N, config.occ[sel] / N)
    )


# ---------------------------------------------------------------------------
# hydrodynamic-limit experiment


@dataclass
class ScalingExperiment:
    spec: ModelSpec
    table: FluxTable
    u0: StepProfile
    scales: Sequence[int]
    t: float
    seeds_per_scale: int = 1
    master_seed: int = 0
    time_points: int = 10
    margin: float = 0.5
    dx: float = 0.002
    cfl: float = 0.45
    window: Optional[tuple] = None  # override; must dominate the propagation cone


def run_hydro_experiment(exp: ScalingExperiment) -> dict:
    """Per-scale sup-CDF distance traces against the Godunov solution."""
    V = lipschitz_bound(exp.spec)
    lo, hi = exp.u0.support()
    need = (lo - V * exp.t - exp.margin, hi + V * exp.t + exp.margin)
    window = exp.window or need
    if window[0] > need[0] + 1e-12 or window[1] < need[1] - 1e-12:
        raise ValueError(
            f"window {window} does not dominate the propagation cone {need}"
        )

    times = [exp.t * i / (exp.time_points - 1) for i in range(exp.time_points)]
    pde = solve_cauchy_series(exp.table, exp.u0, times, exp.dx, cfl=exp.cfl,
                              pad=V * exp.t + exp.margin)
    report = {"window": list(window), "times": times, "total_mass": exp.u0.as_mass_measure().total_mass(),
              "scales": []}
    for N in exp.scales:
        entries = []
        for r in range(exp.seeds_per_scale):
            seed = derive_seed(exp.master_seed, "hydro", N, r)
            trace = _hydro_one(exp, N, seed, window, times, pde)
            entries.append({"seed": seed, "delta_trace": trace,
                            "max_delta": max(d for _, d in trace),
                            "final_delta": trace[-1][1]})
        report["scales"].append({
            "N": N,
            "seeds": entries,
            "mean_final": float(np.mean([e["final_delta"] for e in entries])),
            "mean_max": float(np.mean([e["max_delta"] for e in entries])),
        })
    return report


def _hydro_one(exp: ScalingExperiment, N: int, seed, window, times, pde) -> list:
    cfg = sample_initial(exp.u0, N, exp.spec.K, derive_seed(seed, "init"), window=window)
    fld = sample_environment(exp.spec, cfg.L, seed=derive_seed(seed, "env"))
    runtime = build_runtime(exp.spec, fld)
    stream = stream_for(runtime, cfg, seed=derive_seed(seed, "stream"))
    micro_times = [s * N for s in times]
    trace = [(times[0], delta_distance(empirical_measure(cfg, N), pde[0]))]
    current = cfg
    for i in range(1, len(times)):
        current = evolve(runtime, current, micro_times[i] - micro_times[i - 1], stream)
        d = delta_distance(empirical_measure(current, N), pde[i])
        trace.append((times[i], float(d)))
    return trace


# ---------------------------------------------------------------------------
# Riemann current law of large numbers


def _ordered_pair_at_densities(L: int, K: int, n_low: int, n_high: int, seed) -> tuple[Configuration, Configuration]:
    """Sitewise-ordered pair with the prescribed particle counts on a ring."""
    low = Configuration.with_particle_count(L, K, n_low, seed=derive_seed(seed, "low"))
    occ = low.occ.copy()
    rng = generator("add-particles", seed)
    todo = n_high - n_low
    while todo > 0:
        free = np.nonzero(occ < K)[0]
        take = min(todo, free.size)
        occ[rng.choice(free, size=take, replace=False)] += 1
        todo -= take
    return low, Configuration(occ, RING, 0)


def equilibrated_riemann_state(spec: ModelSpec, lam: float, rho: float, half_width: int,
                               seed, eq_burn: float) -> tuple[Configuration, Runtime]:
    """Glued profile: density lam left of the origin, rho right of it.

    The two halves come from one coupled equilibration run (shared noise,
    ordered initial data), then are cut and gluing keeps the left half of the
    low-density copy and the right half of the high-density one.
    """
    L = 2 * half_width
    fld = sample_environment(spec, L, seed=derive_seed(seed, "env"))
    runtime = build_runtime(spec, fld)
    swap = lam > rho
    a, b = (rho, lam) if swap else (lam, rho)
    low, high = _ordered_pair_at_densities(L, spec.K, int(a * L), int(b * L),
                                           derive_seed(seed, "init"))
    ring_stream = stream_for(runtime, low, seed=derive_seed(seed, "eq-stream"))
    low_eq, high_eq = evolve_coupled(runtime, [low, high], eq_burn, ring_stream)
    left, right = (high_eq, low_eq) if swap else (low_eq, high_eq)
    occ = np.concatenate([left.occ[:half_width], right.occ[half_width:]])
    return Configuration(occ, SEGMENT, origin=-half_width), runtime


def run_riemann_current(spec: ModelSpec, table: FluxTable, lam: float, rho: float,
                        velocities: Sequence[float], scales: Sequence[int], t: float,
                        seeds_per_scale: int, master_seed, margin: float = 0.5,
                        eq_burn: float = 150.0) -> dict:
    """Observer current ratios phi^v / (N t) against the variational value."""
    V = lipschitz_bound(spec)
    vmax = max(abs(v) for v in velocities)
    targets = {v: riemann_value(table, lam, rho, v).value for v in velocities}
    report = {"lam": lam, "rho": rho, "velocities": list(velocities),
              "targets": {str(v): targets[v] for v in velocities}, "scales": []}
    for N in scales:
        half_width = int(math.ceil(((V + vmax) * t + margin) * N))
        entries = []
        for r in range(seeds_per_scale):
            seed = derive_seed(master_seed, "riemann", N, r)
            cfg, runtime = equilibrated_riemann_state(spec, lam, rho, half_width, seed, eq_burn)
            stream = stream_for(runtime, cfg, seed=derive_seed(seed, "run-stream"))
            res = count_current(runtime, cfg, velocities, N * t, stream)
            ratios = {str(v): float(phi) / (N * t) for v, phi in zip(velocities, res.phi)}
            mass_check = _mass_current_identity(res, velocities, N, t)
            entries.append({"seed": seed, "ratios": ratios, "mass_identity_gap": mass_check})
        report["scales"].append({
            "N": N,
            "half_width": half_width,
            "entries": entries,
            "mean_ratios": {
                str(v): float(np.mean([e["ratios"][str(v)] for e in entries]))
                for v in velocities
            },
        })
    return report


def _mass_current_identity(res, velocities, N: int, t: float) -> float:
    """Max gap in: empirical mass between observers = (phi_v - phi_w) / N.

    Evaluating the cumulative at the exact observer positions makes this an
    integer bookkeeping identity; the gap should vanish to rounding.
    """
    emp = empirical_measure(res.final, N)
    vel_list = list(velocities)
    gaps = []
    vs = sorted(velocities)
    for v, w in zip(vs[:-1], vs[1:]):
        jv, jw = vel_list.index(v), vel_list.index(w)
        lo = res.positions[jv] / N
        hi = res.positions[jw] / N
        mass = float(emp.measure.cumulative(np.array([hi]))[0]
                     - emp.measure.cumulative(np.array([lo]))[0])
        pred = (float(res.phi[jv]) - float(res.phi[jw])) / N
        gaps.append(abs(mass - pred))
    return max(gaps) if gaps else 0.0


# ---------------------------------------------------------------------------
# coupling property suites


def _random_ordered_pair(L: int, K: int, seed) -> tuple[Configuration, Configuration]:
    rng = generator("ordered-pair", seed)
    upper = rng.integers(0, K + 1, L)
    lower = np.minimum(upper, rng.integers(0, K + 1, L))
    return (Configuration(lower.astype(np.int64), RING, 0),
            Configuration(upper.astype(np.int64), RING, 0))


def run_ordering_suite(spec: ModelSpec, trials: int, L: int, events_per_site: float,
                       master_seed, checkpoints: int = 10) -> dict:
    """Exact sitewise order preservation for coupled ordered pairs."""
    violations = []
    for trial in range(trials):
        seed = derive_seed(master_seed, "ordering", trial)
        fld = sample_environment(spec, L, seed=derive_seed(seed, "env"))
        runtime = build_runtime(spec, fld)
        horizon = events_per_site / runtime.rate_per_site
        lower, upper = _random_ordered_pair(L, spec.K, derive_seed(seed, "pair"))
        stream = stream_for(runtime, lower, seed=derive_seed(seed, "stream"))
        times = [horizon * (i + 1) / checkpoints for i in range(checkpoints)]
        _, snaps = evolve_coupled(runtime, [lower, upper], horizon, stream, checkpoints=times)
        for tc, (lo_c, hi_c) in snaps.items():
            if np.any(lo_c.occ > hi_c.occ):
                violations.append({"trial": trial, "seed": seed, "time": tc})
                break
    return {"trials": trials, "violations": violations, "passed": not violations}


def opposite_discrepancy_pairs(a: Configuration, b: Configuration) -> int:
    """Number of site pairs (x, y) with a > b at x and a < b at y."""
    diff = a.occ - b.occ
    return int((diff > 0).sum() * (diff < 0).sum())


def run_discrepancy_suite(spec: ModelSpec, trials: int, L: int, horizon: float,
                          master_seed, time_points: int = 5,
                          init: str = "single_pair") -> dict:
    """Decay of opposite discrepancies between coupled unordered copies."""
    times = [horizon * (i + 1) / time_points for i in range(time_points)]
    traces = []
    for trial in range(trials):
        seed = derive_seed(master_seed, "discrepancy", trial)
        fld = sample_environment(spec, L, seed=derive_seed(seed, "env"))
        runtime = build_runtime(spec, fld)
        a, b = _discrepant_pair(L, spec.K, init, derive_seed(seed, "pair"))
        stream = stream_for(runtime, a, seed=derive_seed(seed, "stream"))
        initial = opposite_discrepancy_pairs(a, b)
        _, snaps = evolve_coupled(runtime, [a, b], horizon, stream, checkpoints=times)
        trace = [initial] + [opposite_discrepancy_pairs(*snaps[tc]) for tc in times]
        traces.append(trace)
    arr = np.asarray(traces, dtype=np.float64)
    mean_trace = arr.mean(axis=0)
    return {
        "trials": trials,
        "times": [0.0] + times,
        "mean_pairs": mean_trace.tolist(),
        "initial_mean": float(mean_trace[0]),
        "final_mean": float(mean_trace[-1]),
        "final_over_initial": float(mean_trace[-1] / mean_trace[0]) if mean_trace[0] else 0.0,
        "ordered_fraction_final": float((arr[:, -1] == 0).mean()),
    }


def _discrepant_pair(L: int, K: int, init: str, seed) -> tuple[Configuration, Configuration]:
    rng = generator("discrepant-pair", seed)
    if init == "single_pair":
        # half-filled background, one +/- discrepancy at adjacent sites
        occ = np.zeros(L, dtype=np.int64)
        occ[::2] = 1 if K >= 1 else 0
        a = occ.copy()
        b = occ.copy()
        x = int(rng.integers(0, L // 2)) * 2  # occupied in the background
        y = (x + 1) % L
        a[x], a[y] = 1, 0
        b[x], b[y] = 0, 1
        return Configuration(a, RING, 0), Configuration(b, RING, 0)
    if init == "random":
        a = rng.integers(0, K + 1, L).astype(np.int64)
        b = rng.integers(0, K + 1, L).astype(np.int64)
        return Configuration(a, RING, 0), Configuration(b, RING, 0)
    raise ValueError(f"unknown discrepancy init {init!r}")


def run_stability_suite(spec: ModelSpec, pairs: int, L: int, horizon: float,
                        master_seed, slack_fraction: float = 0.05,
                        density: float = 0.5, time_points: int = 5) -> dict:
    """Sup-CDF distance between coupled near-identical profiles over time."""
    times = [horizon * (i + 1) / time_points for i in range(time_points)]
    results = []
    for trial in range(pairs):
        seed = derive_seed(master_seed, "stability", trial)
        fld = sample_environment(spec, L, seed=derive_seed(seed, "env"))
        runtime = build_runtime(spec, fld)
        n = int(density * L)
        a = Configuration.with_particle_count(L, spec.K, n, seed=derive_seed(seed, "a"))
        b = a.copy()
        rng = generator("perturb", seed)
        occupied = np.nonzero(b.occ > 0)[0]
        free = np.nonzero(b.occ < spec.K)[0]
        if occupied.size and free.size:
            b.occ[rng.choice(occupied)] -= 1
            b.occ[rng.choice(free)] += 1
        stream = stream_for(runtime, a, seed=derive_seed(seed, "stream"))
        d0 = delta_distance(empirical_measure(a, L), empirical_measure(b, L))
        _, snaps = evolve_coupled(runtime, [a, b], horizon, stream, checkpoints=times)
        ds = [delta_distance(empirical_measure(sa, L), empirical_measure(sb, L))
              for sa, sb in (snaps[tc] for tc in times)]
        mass = a.particle_count / L
        results.append({"seed": seed, "delta0": d0, "deltas": ds,
                        "ok": all(d <= d0 + slack_fraction * mass + 1e-12 for d in ds)})
    frac = float(np.mean([r["ok"] for r in results])) if results else 1.0
    return {"pairs": pairs, "results": results, "fraction_stable": frac,
            "slack_fraction": slack_fraction}
