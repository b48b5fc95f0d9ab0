"""Homogenized flux estimation from equilibrium runs at fixed density.

The flux through a site, averaged over long runs of a fixed-density ring,
does not depend on where you look or on the disorder realization; sweeping
the density grid yields an interpolable table that feeds the conservation-law
solver.  Misanthrope and generalized rates integrate the instantaneous flux
exactly between events; path families average snapshots on a regular time
grid instead (their per-event flux updates touch too many sites to be worth
integrating exactly).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from ._rng import derive_seed
from .engine import RING, Configuration, EventStream, Runtime, build_runtime, evolve, stream_for
from .models import ModelSpec, StructureError, sample_environment, lipschitz_bound
from .persist import canonical_hash, read_json, write_csv, write_json

FLUX_TABLE_VERSION = 1


# ---------------------------------------------------------------------------
# instantaneous flux


def microscopic_flux(runtime: Runtime, config: Configuration, x: int) -> float:
    """Expected signed transport out of site x in the current configuration."""
    return float(flux_profile(runtime, config)[x])


def flux_profile(runtime: Runtime, config: Configuration) -> np.ndarray:
    """Vectorized per-site instantaneous flux."""
    eta = config.occ
    L = eta.shape[0]
    ring = config.geometry == RING
    if runtime.family == "misanthrope":
        out = np.zeros(L)
        for j, z in enumerate(runtime.zvals):
            nb = _neighbor(eta, int(z), ring)
            out += runtime.zp[j] * np.where(nb >= 0, runtime.btab[eta, np.maximum(nb, 0)], 0.0)
        return runtime.alpha * out
    if runtime.family == "generalized":
        out = np.zeros(L)
        idx = np.arange(L)
        for j, z in enumerate(runtime.zvals):
            nb = _neighbor(eta, int(z), ring)
            vals = runtime.B[idx, j, eta, np.maximum(nb, 0)]
            out += float(z) * np.where(nb >= 0, vals, 0.0)
        return out
    # kstep: expected beta^N * (Y - x) by exact path enumeration
    paths = runtime.paths
    P, k = paths.shape
    probs = np.diff(runtime.cumq, axis=1, prepend=0.0)
    out = np.zeros(L)
    xs = np.arange(L)
    open_prefix = np.ones((L, P), dtype=bool)  # all earlier steps blocked so far
    done = np.zeros((L, P), dtype=bool)
    for i in range(k):
        tgt = xs[:, None] + paths[None, :, i]
        if ring:
            tgt = tgt % L
            openness = eta[tgt] < runtime.K
        else:
            inside = (tgt >= 0) & (tgt < L)
            openness = np.zeros_like(inside)
            openness[inside] = eta[tgt[inside]] < runtime.K
        settle = open_prefix & ~done & openness
        if settle.any():
            contrib = probs * runtime.beta[:, :, i] * paths[None, :, i]
            out += np.where(settle, contrib, 0.0).sum(axis=1)
            done |= settle
    return np.where(eta > 0, out, 0.0)


def _neighbor(eta: np.ndarray, z: int, ring: bool) -> np.ndarray:
    """Occupancy of x+z per site; -1 marks out-of-segment targets."""
    L = eta.shape[0]
    if ring:
        return eta[(np.arange(L) + z) % L]
    out = np.full(L, -1, dtype=np.int64)
    lo, hi = max(0, -z), min(L, L - z)
    out[lo:hi] = eta[lo + z:hi + z]
    return out


# ---------------------------------------------------------------------------
# flux tables


@dataclass
class FluxTable:
    """Interpolable density -> flux map with per-point standard errors."""

    densities: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    K: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.densities = np.array(self.densities, dtype=np.float64)
        self.values = np.array(self.values, dtype=np.float64)
        self.stderr = np.array(self.stderr, dtype=np.float64)
        if self.densities.ndim != 1 or np.any(np.diff(self.densities) <= 0):
            raise StructureError("density grid must be strictly increasing")
        if self.densities[0] != 0.0 or self.densities[-1] != self.K:
            raise StructureError("density grid must span [0, K]")
        if self.values[0] != 0.0 or self.values[-1] != 0.0:
            raise StructureError("flux must vanish exactly at densities 0 and K")
        for a in (self.densities, self.values, self.stderr):
            a.setflags(write=False)

    def interp(self, rho) -> np.ndarray | float:
        rho_arr = np.asarray(rho, dtype=np.float64)
        if np.any(rho_arr < 0) or np.any(rho_arr > self.K):
            raise ValueError(f"density outside [0, {self.K}]")
        out = np.interp(rho_arr, self.densities, self.values)
        return float(out) if np.isscalar(rho) or rho_arr.ndim == 0 else out

    def max_speed(self) -> float:
        slopes = np.diff(self.values) / np.diff(self.densities)
        return float(np.max(np.abs(slopes)))

    def lipschitz_check(self, V: float) -> list[int]:
        """Indices i where |G_i+1 - G_i| exceeds V*drho + 3*pooled stderr."""
        bad = []
        for i in range(len(self.densities) - 1):
            drho = self.densities[i + 1] - self.densities[i]
            slack = 3.0 * math.hypot(self.stderr[i], self.stderr[i + 1])
            if abs(self.values[i + 1] - self.values[i]) > V * drho + slack:
                bad.append(i)
        return bad

    @classmethod
    def from_function(cls, g, grid, K: float = 1.0, meta: dict | None = None) -> "FluxTable":
        grid = np.asarray(grid, dtype=np.float64)
        vals = np.array([g(r) for r in grid], dtype=np.float64)
        vals[0] = 0.0
        vals[-1] = 0.0
        return cls(grid, vals, np.zeros_like(vals), K, meta or {"source": "analytic"})

    def to_payload(self) -> dict:
        return {
            "format_version": FLUX_TABLE_VERSION,
            "kind": "flux_table",
            "K": self.K,
            "densities": self.densities.tolist(),
            "values": self.values.tolist(),
            "stderr": self.stderr.tolist(),
            "meta": self.meta,
        }

    def save(self, path) -> None:
        write_json(path, self.to_payload())

    @classmethod
    def load(cls, path) -> "FluxTable":
        doc = read_json(path)
        if doc.get("format_version") != FLUX_TABLE_VERSION or doc.get("kind") != "flux_table":
            raise StructureError(f"not a flux table document: {path}")
        return cls(np.asarray(doc["densities"]), np.asarray(doc["values"]),
                   np.asarray(doc["stderr"]), float(doc["K"]), doc.get("meta", {}))

    def to_csv(self, path) -> None:
        write_csv(path, ["density", "flux", "stderr"],
                  zip(self.densities.tolist(), self.values.tolist(), self.stderr.tolist()))


def interpolate_flux(table: FluxTable, rho: float) -> float:
    """Piecewise-linear interpolation; exact at grid points."""
    return float(table.interp(float(rho)))


# ---------------------------------------------------------------------------
# point estimation


@dataclass
class FluxPoint:
    rho: float
    value: float
    stderr: float
    replicate_means: list
    diagnostics: dict


def estimate_flux_point(spec: ModelSpec, rho: float, *, L: int, burn_in: float,
                        horizon: float, seeds, batches: int = 20,
                        batch_len: float | None = None) -> FluxPoint:
    """Space-time average of the instantaneous flux on a fixed-density ring.

    Each seed gets its own disorder draw, initial remainder placement, and
    event stream.  The estimate at each seed uses batch means over at least
    20 batches; with several seeds the pooled error is the between-seed
    standard error, which also absorbs disorder-to-disorder variation.
    """
    if batches < 20:
        raise ValueError("at least 20 batches are required for the error model")
    if batch_len is not None:
        if horizon < batches * batch_len:
            raise ValueError("horizon shorter than the requested batch count")
    else:
        batch_len = horizon / batches
    if horizon <= 0:
        raise ValueError("measurement horizon must be positive")
    if not (0 <= rho <= spec.K):
        raise ValueError("density outside [0, K]")

    n = int(math.floor(rho * L))
    if n == 0 or n == spec.K * L:
        # frozen endpoints: empty stays empty, full rings cannot move
        return FluxPoint(rho, 0.0, 0.0, [0.0] * len(list(seeds)), {"frozen": True})

    rep_means = []
    rep_errs = []
    diags = []
    for seed in seeds:
        mean, err, diag = _flux_replicate(spec, rho, n, L, burn_in, horizon, batches, seed)
        rep_means.append(mean)
        rep_errs.append(err)
        diags.append(diag)

    if len(rep_means) >= 2:
        value = float(np.mean(rep_means))
        stderr = float(np.std(rep_means, ddof=1) / math.sqrt(len(rep_means)))
    else:
        value, stderr = rep_means[0], rep_errs[0]
    return FluxPoint(rho, value, stderr, rep_means, {"replicates": diags})


def _flux_replicate(spec: ModelSpec, rho: float, n: int, L: int, burn_in: float,
                    horizon: float, batches: int, seed):
    fld = sample_environment(spec, L, seed=derive_seed(seed, "env"))
    runtime = build_runtime(spec, fld)
    cfg = Configuration.with_particle_count(L, spec.K, n, seed=derive_seed(seed, "init"))
    stream = stream_for(runtime, cfg, seed=derive_seed(seed, "stream"))
    state_cfg = evolve(runtime, cfg, burn_in, stream)

    if runtime.family in ("misanthrope", "generalized"):
        bins = _event_exact_bins(runtime, state_cfg, stream, horizon, batches)
    else:
        bins = _snapshot_bins(runtime, state_cfg, stream, horizon, batches)

    batch_means = bins / (L * (horizon / batches))
    mean = float(bins.sum() / (L * horizon))
    err = float(np.std(batch_means, ddof=1) / math.sqrt(batches))
    half = batches // 2
    first, second = batch_means[:half].mean(), batch_means[half:].mean()
    drift_flag = abs(first - second) > 3.0 * err * math.sqrt(2.0) if err > 0 else False
    diag = {
        "halves": [float(first), float(second)],
        "drift_flag": bool(drift_flag),
        "block_density_variance": _block_density_variance(state_cfg),
    }
    return mean, err, diag


def _event_exact_bins(runtime: Runtime, cfg: Configuration, stream: EventStream,
                      horizon: float, batches: int) -> np.ndarray:
    impl = kernels.active()
    eta = cfg.occ  # measurement continues in place from the burnt-in state
    bins = np.zeros(batches)
    win_start = stream.t_now
    batch_len = horizon / batches
    state = np.array([win_start, flux_profile(runtime, cfg).sum()])
    t = win_start
    end = win_start + horizon
    from .engine import _chunk_ends

    for t2 in _chunk_ends(runtime, cfg.L, t, end):
        times, sites, v1, v2 = stream.take_until(t2)
        zi = runtime.mark_indices(v1)
        if runtime.family == "misanthrope":
            impl.mis_evolve_flux(eta, runtime.alpha, runtime.btab, runtime.zvals, runtime.zp,
                                 runtime.invnorm, sites, zi, v2, times, t2, state, bins,
                                 win_start, batch_len)
        else:
            impl.gen_evolve_flux(eta, runtime.B, runtime.zvals, runtime.invP,
                                 sites, zi, v2, times, t2, state, bins, win_start, batch_len)
        state[1] = flux_profile(runtime, cfg).sum()  # refresh against float drift
    return bins


def _snapshot_bins(runtime: Runtime, cfg: Configuration, stream: EventStream,
                   horizon: float, batches: int, per_batch: int = 8) -> np.ndarray:
    """Quadrature of the flux profile on a regular time grid, kstep families."""
    bins = np.zeros(batches)
    batch_len = horizon / batches
    dt = batch_len / per_batch
    state = cfg.copy()
    for bidx in range(batches):
        acc = 0.0
        for _ in range(per_batch):
            state = evolve(runtime, state, dt, stream)
            acc += flux_profile(runtime, state).sum()
        bins[bidx] = acc / per_batch * batch_len
    cfg.occ[:] = state.occ
    return bins


def _block_density_variance(cfg: Configuration) -> float:
    """Variance of block densities at scale sqrt(L); phase-separation gauge."""
    L = cfg.L
    w = max(int(math.isqrt(L)), 1)
    nb = L // w
    if nb < 2:
        return 0.0
    blocks = cfg.occ[: nb * w].reshape(nb, w).mean(axis=1)
    return float(np.var(blocks))


# ---------------------------------------------------------------------------
# table construction


def build_flux_table(spec: ModelSpec, grid, *, L: int, burn_in: float, horizon: float,
                     seeds_per_point: int, master_seed, batches: int = 20,
                     workers: int | None = None) -> FluxTable:
    """Estimate the flux on a density grid and package it as a table.

    Per-point seeds derive from (master_seed, point index, replicate), so the
    result is independent of execution order and worker count.
    """
    grid = np.asarray(sorted(float(r) for r in grid), dtype=np.float64)
    if grid[0] != 0.0 or grid[-1] != float(spec.K):
        raise StructureError("flux grid must include the endpoint densities 0 and K")

    jobs = []
    for i, rho in enumerate(grid):
        seeds = [derive_seed(master_seed, "flux-point", i, r) for r in range(seeds_per_point)]
        jobs.append((spec, float(rho), L, burn_in, horizon, seeds, batches))

    workers = workers if workers is not None else int(os.environ.get("QUENCHFLOW_WORKERS", "1"))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(_point_job, jobs))
    else:
        points = [_point_job(j) for j in jobs]

    values = np.array([p.value for p in points])
    stderr = np.array([p.stderr for p in points])
    values[0] = 0.0
    values[-1] = 0.0
    V = lipschitz_bound(spec)
    meta = {
        "model_hash": canonical_hash(spec.descriptor()),
        "model": spec.descriptor(),
        "L": L,
        "burn_in": burn_in,
        "horizon": horizon,
        "seeds_per_point": seeds_per_point,
        "master_seed": master_seed,
        "batches": batches,
        "lipschitz_speed": V,
        "diagnostics": [p.diagnostics for p in points],
    }
    table = FluxTable(grid, values, stderr, float(spec.K), meta)
    meta["lipschitz_flags"] = table.lipschitz_check(V)
    return table


def _point_job(args) -> FluxPoint:
    spec, rho, L, burn_in, horizon, seeds, batches = args
    return estimate_flux_point(spec, rho, L=L, burn_in=burn_in, horizon=horizon,
                               seeds=seeds, batches=batches)
